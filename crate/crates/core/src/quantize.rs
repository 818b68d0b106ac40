//! INT8 post-training quantization.
//!
//! Weights are symmetric per tensor (`scale = max|w| / 127`, values in
//! `[-127, 127]`). Activations are asymmetric per tensor over the
//! calibrated range widened to include zero, with 256 levels. Rounding is
//! half away from zero everywhere. Conv and dense layers accumulate in
//! i64 with an i32 bias at `scale_w * scale_x`, then requantize to the
//! output edge. Other layers dequantize, apply the fp32 op, and requantize.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    bias_name, topological_order, weight_name, Graph, GraphError, LayerSpec, Node, PoolSpec,
    Shape, Tensor, TensorData,
};
use crate::interpret::{
    argmax_classify, in_range, out_shape, run_graph, threshold, window, Activation, ExecError,
    NamedTensors,
};
use crate::modelfmt::{read_weight_blob, write_weight_blob, ModelError, ModelFile, ModelMetadata};

/// Floor applied to degenerate ranges so scales stay positive.
pub const RANGE_EPSILON: f32 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("calibration needs at least one input")]
    EmptyCalibrationSet,
    #[error("no calibration range for edge `{0}`")]
    UncoveredEdge(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing weight `{0}`")]
    MissingWeight(String),
    #[error("missing quantization parameters for `{0}`")]
    MissingParams(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantScheme {
    SymmetricWeights,
    AsymmetricActivations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
    pub scheme: QuantScheme,
}

pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

impl QuantParams {
    pub fn symmetric(max_abs: f32) -> Self {
        let range = max_abs.abs().max(RANGE_EPSILON);
        QuantParams { scale: range / 127.0, zero_point: 0, scheme: QuantScheme::SymmetricWeights }
    }

    pub fn for_weights(w: &[f32]) -> Self {
        QuantParams::symmetric(w.iter().fold(0.0f32, |m, v| m.max(v.abs())))
    }

    /// Asymmetric parameters over `[min, max]` widened to include 0 and to at
    /// least `RANGE_EPSILON` wide.
    pub fn asymmetric(min: f32, max: f32) -> Self {
        let (lo, hi) = widen(min, max);
        let scale = (hi - lo) / 255.0;
        let zp = round_half_away(-128.0 - lo as f64 / scale as f64).clamp(-128.0, 127.0) as i32;
        QuantParams { scale, zero_point: zp, scheme: QuantScheme::AsymmetricActivations }
    }

    pub fn qmin(&self) -> i32 {
        match self.scheme {
            QuantScheme::SymmetricWeights => -127,
            QuantScheme::AsymmetricActivations => -128,
        }
    }

    pub fn qmax(&self) -> i32 {
        127
    }

    pub fn quantize(&self, v: f32) -> i8 {
        let q = round_half_away(v as f64 / self.scale as f64) + self.zero_point as f64;
        q.clamp(self.qmin() as f64, self.qmax() as f64) as i8
    }

    pub fn dequantize_exact(&self, q: i8) -> f64 {
        (q as i32 - self.zero_point) as f64 * self.scale as f64
    }

    pub fn dequantize(&self, q: i8) -> f32 {
        self.dequantize_exact(q) as f32
    }

    /// Smallest and largest representable real values.
    pub fn representable(&self) -> (f64, f64) {
        (
            (self.qmin() - self.zero_point) as f64 * self.scale as f64,
            (self.qmax() - self.zero_point) as f64 * self.scale as f64,
        )
    }

    /// Requantizes a real value held in f64, as used after integer accumulation.
    fn quantize_f64(&self, v: f64) -> i8 {
        let q = round_half_away(v / self.scale as f64) + self.zero_point as f64;
        q.clamp(self.qmin() as f64, self.qmax() as f64) as i8
    }
}

fn widen(min: f32, max: f32) -> (f32, f32) {
    let lo = min.min(0.0);
    let mut hi = max.max(0.0);
    if hi - lo < RANGE_EPSILON {
        hi = lo + RANGE_EPSILON;
    }
    (lo, hi)
}

/// Observed min/max per edge (graph inputs and node outputs).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationStats {
    pub ranges: BTreeMap<String, (f32, f32)>,
}

impl CalibrationStats {
    pub fn observe(&mut self, edge: &str, values: &[f32]) {
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        self.observe_range(edge, lo, hi);
    }

    fn observe_range(&mut self, edge: &str, lo: f32, hi: f32) {
        self.ranges
            .entry(edge.to_string())
            .and_modify(|r| *r = (r.0.min(lo), r.1.max(hi)))
            .or_insert((lo, hi));
    }

    /// Envelope of two calibration runs.
    pub fn merge(&mut self, other: &CalibrationStats) {
        for (edge, &(lo, hi)) in &other.ranges {
            self.observe_range(edge, lo, hi);
        }
    }

    /// The range after zero-inclusion and degenerate widening.
    pub fn widened(&self, edge: &str) -> Option<(f32, f32)> {
        self.ranges.get(edge).map(|&(lo, hi)| widen(lo, hi))
    }
}

pub fn calibrate(g: &Graph, calib_inputs: &[NamedTensors]) -> Result<CalibrationStats, QuantError> {
    if calib_inputs.is_empty() {
        return Err(QuantError::EmptyCalibrationSet);
    }
    let mut stats = CalibrationStats::default();
    for inputs in calib_inputs {
        let run = run_graph(g, inputs, true)?;
        for decl in &g.inputs {
            let t = &inputs[&decl.name];
            stats.observe(&decl.name, t.as_f32().unwrap_or_default());
        }
        for node in run.trace.expect("instrumented run has a trace").nodes {
            stats.observe(&node.node, node.output.as_f32().unwrap_or_default());
        }
    }
    Ok(stats)
}

/// An int8 tensor together with its quantization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub shape: Shape,
    pub data: Vec<i8>,
    pub params: QuantParams,
}

impl QTensor {
    pub fn quantize(t: &[f32], shape: Shape, params: QuantParams) -> Self {
        QTensor { shape, data: t.iter().map(|&v| params.quantize(v)).collect(), params }
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.data.iter().map(|&q| self.params.dequantize(q)).collect()
    }

    fn requantize(&self, to: QuantParams) -> QTensor {
        if to == self.params {
            return self.clone();
        }
        QTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&q| to.quantize_f64(self.params.dequantize_exact(q))).collect(),
            params: to,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGraph {
    /// Topology and the fp32 weights the int8 payloads were derived from.
    pub base: Graph,
    pub weights: BTreeMap<String, QTensor>,
    /// Int32 biases at `scale_w * scale_x`, keyed by bias tensor name.
    pub biases: BTreeMap<String, Vec<i32>>,
    pub edge_params: BTreeMap<String, QuantParams>,
}

fn param_layer(node: &Node) -> Option<bool> {
    match &node.layer {
        LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => Some(c.has_bias),
        LayerSpec::Dense(d) => Some(d.has_bias),
        _ => None,
    }
}

fn quantize_bias(b: &[f32], w: &QuantParams, x: &QuantParams) -> Vec<i32> {
    let s = w.scale as f64 * x.scale as f64;
    b.iter()
        .map(|&v| round_half_away(v as f64 / s).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

pub fn quantize_graph(g: &Graph, stats: &CalibrationStats) -> Result<QuantizedGraph, QuantError> {
    let mut edge_params = BTreeMap::new();
    let edges = g.inputs.iter().map(|i| &i.name).chain(g.nodes.iter().map(|n| &n.id));
    for edge in edges {
        let (lo, hi) = stats.widened(edge).ok_or_else(|| QuantError::UncoveredEdge(edge.clone()))?;
        edge_params.insert(edge.clone(), QuantParams::asymmetric(lo, hi));
    }
    let mut weights = BTreeMap::new();
    let mut biases = BTreeMap::new();
    for node in &g.nodes {
        let Some(has_bias) = param_layer(node) else { continue };
        let wn = weight_name(&node.id);
        let w = g.weight(&wn).ok_or_else(|| QuantError::MissingWeight(wn.clone()))?;
        let wv = w.as_f32().ok_or_else(|| ExecError::NotFloat(wn.clone()))?;
        let qw = QTensor::quantize(wv, w.shape().clone(), QuantParams::for_weights(wv));
        if has_bias {
            let bn = bias_name(&node.id);
            let b = g.weight(&bn).ok_or_else(|| QuantError::MissingWeight(bn.clone()))?;
            let bv = b.as_f32().ok_or_else(|| ExecError::NotFloat(bn.clone()))?;
            let xp = edge_params[&node.inputs[0]];
            biases.insert(bn, quantize_bias(bv, &qw.params, &xp));
        }
        weights.insert(wn, qw);
    }
    Ok(QuantizedGraph { base: g.clone(), weights, biases, edge_params })
}

fn int_conv(
    x: &QTensor,
    w: &QTensor,
    bias: Option<&[i32]>,
    stride: &[usize],
    pad: &[usize],
    rank: usize,
    out: QuantParams,
) -> Result<QTensor, QuantError> {
    let xd = x.shape.dims();
    let wd = w.shape.dims();
    if xd.len() != rank + 1 || wd.len() != rank + 2 || wd[1] != xd[0] {
        return Err(QuantError::ShapeMismatch(format!(
            "conv input {} incompatible with weight {}",
            x.shape, w.shape
        )));
    }
    let (cin, cout) = (xd[0], wd[0]);
    let win = window(&xd[1..], &wd[2..], stride, pad)?;
    let [kd, kh, kw] = win.kernel;
    let [id, ih, iw] = win.input;
    let [od, oh, ow] = win.output;
    let zp = x.params.zero_point as i64;
    let real_scale = w.params.scale as f64 * x.params.scale as f64;
    let mut data = Vec::with_capacity(cout * od * oh * ow);
    for oc in 0..cout {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc: i64 = 0;
                    for ic in 0..cin {
                        let wbase = (oc * cin + ic) * kd * kh * kw;
                        let xbase = ic * id * ih * iw;
                        for a in 0..kd {
                            let Some(zi) = in_range(z, a, win.stride[0], win.pad[0], id) else {
                                continue;
                            };
                            for r in 0..kh {
                                let Some(yi) = in_range(y, r, win.stride[1], win.pad[1], ih)
                                else {
                                    continue;
                                };
                                for c in 0..kw {
                                    let Some(xi) = in_range(xo, c, win.stride[2], win.pad[2], iw)
                                    else {
                                        continue;
                                    };
                                    let xq = x.data[xbase + (zi * ih + yi) * iw + xi] as i64 - zp;
                                    acc += xq * w.data[wbase + (a * kh + r) * kw + c] as i64;
                                }
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[oc] as i64;
                    }
                    data.push(out.quantize_f64(acc as f64 * real_scale));
                }
            }
        }
    }
    Ok(QTensor { shape: out_shape(cout, &win, rank), data, params: out })
}

fn int_dense(
    x: &QTensor,
    w: &QTensor,
    bias: Option<&[i32]>,
    out: QuantParams,
) -> Result<QTensor, QuantError> {
    let wd = w.shape.dims();
    if wd.len() != 2 || x.shape.dims() != [wd[1]] {
        return Err(QuantError::ShapeMismatch(format!(
            "dense input {} incompatible with weight {}",
            x.shape, w.shape
        )));
    }
    let (outs, ins) = (wd[0], wd[1]);
    let zp = x.params.zero_point as i64;
    let real_scale = w.params.scale as f64 * x.params.scale as f64;
    let data = (0..outs)
        .map(|o| {
            let row = &w.data[o * ins..(o + 1) * ins];
            let mut acc: i64 = row
                .iter()
                .zip(&x.data)
                .map(|(&wi, &xi)| wi as i64 * (xi as i64 - zp))
                .sum();
            if let Some(b) = bias {
                acc += b[o] as i64;
            }
            out.quantize_f64(acc as f64 * real_scale)
        })
        .collect();
    Ok(QTensor { shape: crate::shape![outs], data, params: out })
}

/// Max over int8 codes; the mapping is monotone so this equals pooling the reals.
fn int_pool(x: &QTensor, spec: &PoolSpec, rank: usize, out: QuantParams) -> Result<QTensor, QuantError> {
    let xd = x.shape.dims();
    if xd.len() != rank + 1 {
        return Err(QuantError::ShapeMismatch(format!("pool input {}", x.shape)));
    }
    let win = window(&xd[1..], &spec.window, &spec.stride, &spec.padding)?;
    let [kd, kh, kw] = win.kernel;
    let [id, ih, iw] = win.input;
    let [od, oh, ow] = win.output;
    let mut data = Vec::with_capacity(xd[0] * od * oh * ow);
    for ch in 0..xd[0] {
        let base = ch * id * ih * iw;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = i8::MIN;
                    for a in 0..kd {
                        let zi = in_range(z, a, win.stride[0], win.pad[0], id);
                        for r in 0..kh {
                            let yi = in_range(y, r, win.stride[1], win.pad[1], ih);
                            for c in 0..kw {
                                let xi = in_range(xo, c, win.stride[2], win.pad[2], iw);
                                if let (Some(zi), Some(yi), Some(xi)) = (zi, yi, xi) {
                                    best = best.max(x.data[base + (zi * ih + yi) * iw + xi]);
                                }
                            }
                        }
                    }
                    data.push(best);
                }
            }
        }
    }
    let pooled = QTensor { shape: out_shape(xd[0], &win, rank), data, params: x.params };
    Ok(pooled.requantize(out))
}

fn map_dequantized(x: &QTensor, out: QuantParams, f: impl Fn(f32) -> f32) -> QTensor {
    QTensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&q| out.quantize(f(x.params.dequantize(q)))).collect(),
        params: out,
    }
}

impl QuantizedGraph {
    fn params(&self, edge: &str) -> Result<QuantParams, QuantError> {
        self.edge_params.get(edge).copied().ok_or_else(|| QuantError::MissingParams(edge.into()))
    }

    fn weight(&self, node: &str) -> Result<&QTensor, QuantError> {
        let wn = weight_name(node);
        self.weights.get(&wn).ok_or(QuantError::MissingWeight(wn))
    }

    fn bias(&self, node: &str, has_bias: bool) -> Result<Option<&[i32]>, QuantError> {
        if !has_bias {
            return Ok(None);
        }
        let bn = bias_name(node);
        self.biases.get(&bn).map(|b| Some(b.as_slice())).ok_or(QuantError::MissingWeight(bn))
    }

    fn execute(&self, node: &Node, ins: &[&QTensor]) -> Result<QTensor, QuantError> {
        let out = self.params(&node.id)?;
        let x = ins[0];
        Ok(match &node.layer {
            LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => {
                let rank = if matches!(node.layer, LayerSpec::Conv2D(_)) { 2 } else { 3 };
                let b = self.bias(&node.id, c.has_bias)?;
                int_conv(x, self.weight(&node.id)?, b, &c.stride, &c.padding, rank, out)?
            }
            LayerSpec::Dense(d) => {
                let b = self.bias(&node.id, d.has_bias)?;
                int_dense(x, self.weight(&node.id)?, b, out)?
            }
            LayerSpec::MaxPool2D(p) => int_pool(x, p, 2, out)?,
            LayerSpec::MaxPool3D(p) => int_pool(x, p, 3, out)?,
            LayerSpec::ReLU => map_dequantized(x, out, |v| Activation::ReLU.apply(v)),
            LayerSpec::LeakyReLU { alpha } => {
                let a = Activation::LeakyReLU(*alpha);
                map_dequantized(x, out, |v| a.apply(v))
            }
            LayerSpec::Sigmoid => map_dequantized(x, out, |v| Activation::Sigmoid.apply(v)),
            LayerSpec::GreaterThan { theta } => {
                let t = *theta;
                map_dequantized(x, out, |v| threshold(v, t))
            }
            LayerSpec::Flatten => {
                let mut t = x.requantize(out);
                t.shape = crate::shape![t.data.len()];
                t
            }
            LayerSpec::Concat { axis } => {
                let fp: Vec<Tensor> = ins
                    .iter()
                    .map(|q| Tensor::from_f32(q.shape.clone(), q.dequantize()))
                    .collect::<Result<_, _>>()?;
                let refs: Vec<&Tensor> = fp.iter().collect();
                let joined = crate::interpret::concat_forward(&refs, *axis)?;
                QTensor::quantize(joined.as_f32().expect("fp32"), joined.shape().clone(), out)
            }
        })
    }
}

/// Runs the int8 pipeline and returns dequantized graph outputs.
pub fn run_quantized(q: &QuantizedGraph, inputs: &NamedTensors) -> Result<Vec<Tensor>, QuantError> {
    let g = &q.base;
    let mut values: HashMap<&str, QTensor> = HashMap::new();
    for decl in &g.inputs {
        let t = inputs.get(&decl.name).ok_or_else(|| ExecError::MissingInput(decl.name.clone()))?;
        if t.shape() != &decl.shape {
            return Err(QuantError::ShapeMismatch(format!(
                "input `{}` has shape {}, expected {}",
                decl.name,
                t.shape(),
                decl.shape
            )));
        }
        let v = t.as_f32().ok_or_else(|| ExecError::NotFloat(decl.name.clone()))?;
        values.insert(&decl.name, QTensor::quantize(v, decl.shape.clone(), q.params(&decl.name)?));
    }
    for id in topological_order(g)? {
        let node = g.node(&id).expect("ordered node exists");
        let ins: Vec<&QTensor> = node
            .inputs
            .iter()
            .map(|i| values.get(i.as_str()).ok_or_else(|| ExecError::MissingInput(i.clone())))
            .collect::<Result<_, _>>()?;
        let out = q.execute(node, &ins)?;
        values.insert(&node.id, out);
    }
    g.outputs
        .iter()
        .map(|o| {
            let t = values.get(o.as_str()).ok_or_else(|| ExecError::MissingInput(o.clone()))?;
            Ok(Tensor::from_f32(t.shape.clone(), t.dequantize())?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantErrorReport {
    pub max_abs_error: f64,
    pub mean_square_error: f64,
    /// Fraction of inputs whose first-output argmax agrees.
    pub top1_agreement: f64,
    pub samples: usize,
}

/// Error metrics between two sets of graph outputs, one entry per input.
pub fn compare_outputs(reference: &[Vec<Tensor>], candidate: &[Vec<Tensor>]) -> QuantErrorReport {
    let mut max_abs = 0.0f64;
    let mut sq = 0.0f64;
    let mut count = 0usize;
    let mut agree = 0usize;
    for (a, b) in reference.iter().zip(candidate) {
        for (ta, tb) in a.iter().zip(b) {
            for (&x, &y) in ta.as_f32().unwrap_or_default().iter().zip(tb.as_f32().unwrap_or_default()) {
                let d = (x as f64 - y as f64).abs();
                max_abs = max_abs.max(d);
                sq += d * d;
                count += 1;
            }
        }
        let top = |v: &Vec<Tensor>| v.first().and_then(|t| argmax_classify(t.as_f32()?));
        if top(a) == top(b) {
            agree += 1;
        }
    }
    let samples = reference.len().min(candidate.len());
    QuantErrorReport {
        max_abs_error: max_abs,
        mean_square_error: if count == 0 { 0.0 } else { sq / count as f64 },
        top1_agreement: if samples == 0 { 1.0 } else { agree as f64 / samples as f64 },
        samples,
    }
}

pub fn quant_error_report(
    g: &Graph,
    q: &QuantizedGraph,
    inputs: &[NamedTensors],
) -> Result<QuantErrorReport, QuantError> {
    let mut fp = Vec::with_capacity(inputs.len());
    let mut qt = Vec::with_capacity(inputs.len());
    for inp in inputs {
        fp.push(run_graph(g, inp, false)?.outputs);
        qt.push(run_quantized(q, inp)?);
    }
    Ok(compare_outputs(&fp, &qt))
}

/// Model text and blob for a quantized graph: int8 weights, fp32 biases, and
/// the parameter table in the model metadata.
pub fn save_quantized(q: &QuantizedGraph, name: &str) -> (ModelFile, Vec<u8>) {
    let mut table: BTreeMap<String, QuantParams> = q.edge_params.clone();
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (wn, qt) in &q.weights {
        table.insert(wn.clone(), qt.params);
        let t = Tensor::new(qt.shape.clone(), TensorData::I8(qt.data.clone())).expect("length");
        tensors.insert(wn.clone(), t);
    }
    for bn in q.biases.keys() {
        if let Some(b) = q.base.weight(bn) {
            tensors.insert(bn.clone(), b.clone());
        }
    }
    let mut base = q.base.clone();
    base.weights.clear();
    let model = ModelFile::new(
        name,
        base,
        ModelMetadata {
            description: Some("int8 post-training quantized".into()),
            quant_params: Some(table),
            ..Default::default()
        },
    );
    let blob = write_weight_blob(tensors.iter().map(|(n, t)| (n.as_str(), t)));
    (model, blob)
}

pub fn load_quantized(m: &ModelFile, blob: &[u8]) -> Result<QuantizedGraph, QuantError> {
    let table = m.metadata.quant_params.clone().unwrap_or_default();
    let lookup = |k: &str| table.get(k).copied().ok_or_else(|| QuantError::MissingParams(k.into()));
    let mut tensors = read_weight_blob(blob)?;
    let mut base = m.graph.clone();
    let mut weights = BTreeMap::new();
    let mut biases = BTreeMap::new();
    let mut edge_params = BTreeMap::new();
    for edge in base.inputs.iter().map(|i| &i.name).chain(base.nodes.iter().map(|n| &n.id)) {
        edge_params.insert(edge.clone(), lookup(edge)?);
    }
    for node in &m.graph.nodes {
        let Some(has_bias) = param_layer(node) else { continue };
        let wn = weight_name(&node.id);
        let w = tensors.remove(&wn).ok_or_else(|| ModelError::MissingTensor(wn.clone()))?;
        let TensorData::I8(data) = w.data().clone() else {
            return Err(QuantError::ShapeMismatch(format!("`{wn}` must be int8")));
        };
        let params = lookup(&wn)?;
        if has_bias {
            let bn = bias_name(&node.id);
            let b = tensors.remove(&bn).ok_or_else(|| ModelError::MissingTensor(bn.clone()))?;
            let bv = b.as_f32().ok_or_else(|| ExecError::NotFloat(bn.clone()))?;
            biases.insert(bn.clone(), quantize_bias(bv, &params, &edge_params[&node.inputs[0]]));
            base.weights.insert(bn, b);
        }
        weights.insert(wn, QTensor { shape: w.shape().clone(), data, params });
    }
    Ok(QuantizedGraph { base, weights, biases, edge_params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DenseSpec;
    use crate::interpret::single_input;
    use crate::shape;

    #[test]
    fn weight_example() {
        let w = [-1.0f32, 0.5, 1.0];
        let p = QuantParams::for_weights(&w);
        assert_eq!(p.scale, 1.0 / 127.0);
        let q: Vec<i8> = w.iter().map(|&v| p.quantize(v)).collect();
        assert_eq!(q, [-127, 64, 127]);
    }

    #[test]
    fn zero_weights_get_floor_scale() {
        let p = QuantParams::for_weights(&[0.0; 4]);
        assert!(p.scale > 0.0);
        assert_eq!(p.scale, RANGE_EPSILON / 127.0);
        assert_eq!(p.quantize(0.0), 0);
    }

    #[test]
    fn activation_example() {
        let p = QuantParams::asymmetric(0.0, 6.0);
        assert_eq!(p.scale, 6.0 / 255.0);
        assert_eq!(p.zero_point, -128);
        assert_eq!(p.quantize(0.0), -128);
        assert_eq!(p.quantize(6.0), 127);
    }

    #[test]
    fn round_half_away_from_zero() {
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(0.49), 0.0);
    }

    fn relu_graph() -> Graph {
        let mut g = Graph::new();
        g.add_input("x", shape![3]);
        g.add_node("r", LayerSpec::ReLU, ["x"]);
        g.add_output("r");
        g
    }

    #[test]
    fn calibration_envelope() {
        let g = relu_graph();
        let a = single_input(&g, Tensor::vector(&[0.0, 2.0, 1.0]));
        let b = single_input(&g, Tensor::vector(&[-1.0, 1.0, 0.0]));
        let stats = calibrate(&g, &[a.clone()]).unwrap();
        assert_eq!(stats.ranges["x"], (0.0, 2.0));
        let stats = calibrate(&g, &[a, b]).unwrap();
        assert_eq!(stats.ranges["x"], (-1.0, 2.0));
        assert_eq!(stats.ranges["r"], (0.0, 2.0));
        assert_eq!(calibrate(&g, &[]), Err(QuantError::EmptyCalibrationSet));
    }

    #[test]
    fn constant_zero_range_widens() {
        let g = relu_graph();
        let stats = calibrate(&g, &[single_input(&g, Tensor::vector(&[0.0; 3]))]).unwrap();
        assert_eq!(stats.ranges["r"], (0.0, 0.0));
        assert_eq!(stats.widened("r"), Some((0.0, RANGE_EPSILON)));
    }

    #[test]
    fn uncovered_edge() {
        let g = relu_graph();
        let mut stats = CalibrationStats::default();
        stats.observe("x", &[1.0]);
        assert_eq!(quantize_graph(&g, &stats), Err(QuantError::UncoveredEdge("r".into())));
    }

    #[test]
    fn identity_dense_is_lossless() {
        let mut g = Graph::new();
        g.add_input("x", shape![2]);
        g.add_node(
            "fc",
            LayerSpec::Dense(DenseSpec { in_features: 2, out_features: 2, has_bias: false }),
            ["x"],
        );
        g.add_output("fc");
        g.weights
            .insert(weight_name("fc"), Tensor::from_f32(shape![2, 2], vec![1., 0., 0., 1.]).unwrap());
        // Range [0, 255] gives scale 1 so integer inputs are exact.
        let inputs: Vec<NamedTensors> = [[0.0, 255.0], [17.0, 3.0], [128.0, 64.0]]
            .iter()
            .map(|v| single_input(&g, Tensor::vector(v)))
            .collect();
        let stats = calibrate(&g, &inputs).unwrap();
        let q = quantize_graph(&g, &stats).unwrap();
        let report = quant_error_report(&g, &q, &inputs).unwrap();
        assert_eq!(report.max_abs_error, 0.0);
        assert_eq!(report.top1_agreement, 1.0);
    }

    #[test]
    fn self_comparison_is_zero() {
        let t = vec![vec![Tensor::vector(&[0.1, 0.7])], vec![Tensor::vector(&[2.0, -1.0])]];
        let r = compare_outputs(&t, &t);
        assert_eq!((r.max_abs_error, r.mean_square_error, r.top1_agreement), (0.0, 0.0, 1.0));
    }
}
