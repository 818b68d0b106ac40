//! Reference fp32 executor.
//!
//! Every kernel is a direct loop with a fixed reduction order: the
//! accumulator starts at `0.0`, products are added in ascending
//! (input channel, kernel depth, kernel row, kernel column) order, and the
//! bias is added last. Nodes run one at a time in topological order, so a
//! graph behaves like a chain of pipeline stages.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use thiserror::Error;

use crate::graph::{
    bias_name, topological_order, weight_name, ConvSpec, Graph, GraphError, LayerSpec, Node,
    OpCountConvention, PoolSpec, Shape, Tensor,
};
use crate::shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing graph input `{0}`")]
    MissingInput(String),
    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),
    #[error("tensor `{0}` is not fp32")]
    NotFloat(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type NamedTensors = BTreeMap<String, Tensor>;

/// Raw scalar events observed while executing kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTally {
    pub macs: u64,
    pub bias_adds: u64,
    pub pool_comparisons: u64,
    pub activations: u64,
    pub threshold_compares: u64,
    pub moved_elements: u64,
}

impl OpTally {
    pub fn weighted(&self, c: &OpCountConvention) -> u64 {
        self.macs * c.mac_ops
            + self.bias_adds * c.bias_ops_per_output
            + self.pool_comparisons * c.pool_ops_per_comparison
            + self.activations * c.activation_ops_per_element
            + self.threshold_compares * c.compare_ops_per_element
            + self.moved_elements * c.concat_flatten_ops_per_element
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub node: String,
    pub output: Tensor,
    pub tally: OpTally,
    pub ops: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub nodes: Vec<NodeTrace>,
}

impl ExecutionTrace {
    pub fn total_ops(&self) -> u64 {
        self.nodes.iter().map(|n| n.ops).sum()
    }

    pub fn ops_per_node(&self) -> BTreeMap<String, u64> {
        self.nodes.iter().map(|n| (n.node.clone(), n.ops)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub outputs: Vec<Tensor>,
    pub trace: Option<ExecutionTrace>,
}

fn f32_of<'a>(t: &'a Tensor, name: &str) -> Result<&'a [f32], ExecError> {
    t.as_f32().ok_or_else(|| ExecError::NotFloat(name.to_string()))
}

pub(crate) struct Window {
    pub(crate) kernel: [usize; 3],
    pub(crate) stride: [usize; 3],
    pub(crate) pad: [usize; 3],
    pub(crate) input: [usize; 3],
    pub(crate) output: [usize; 3],
}

/// Lifts 2-D spatial parameters to 3-D with a unit depth axis.
fn lift3(v: &[usize], fill: usize) -> [usize; 3] {
    match v.len() {
        2 => [fill, v[0], v[1]],
        3 => [v[0], v[1], v[2]],
        _ => [fill; 3],
    }
}

pub(crate) fn window(
    spatial: &[usize],
    kernel: &[usize],
    stride: &[usize],
    pad: &[usize],
) -> Result<Window, ExecError> {
    let rank = spatial.len();
    if kernel.len() != rank || stride.len() != rank || (!pad.is_empty() && pad.len() != rank) {
        return Err(ExecError::ShapeMismatch(format!(
            "window parameters do not match spatial rank {rank}"
        )));
    }
    let pad = if pad.is_empty() { vec![0; rank] } else { pad.to_vec() };
    let mut output = Vec::with_capacity(rank);
    for a in 0..rank {
        let span = spatial[a] + 2 * pad[a];
        if span < kernel[a] || stride[a] == 0 {
            return Err(ExecError::ShapeMismatch(format!(
                "window {kernel:?} does not fit input {spatial:?} with padding {pad:?}"
            )));
        }
        output.push((span - kernel[a]) / stride[a] + 1);
    }
    Ok(Window {
        kernel: lift3(kernel, 1),
        stride: lift3(stride, 1),
        pad: lift3(&pad, 0),
        input: lift3(spatial, 1),
        output: lift3(&output, 1),
    })
}

pub(crate) fn out_shape(channels: usize, w: &Window, rank: usize) -> Shape {
    let mut dims = vec![channels];
    dims.extend_from_slice(&w.output[3 - rank..]);
    Shape::new(dims).expect("window output dims are positive")
}

#[inline]
pub(crate) fn in_range(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < len).then_some(pos)
}

fn conv_nd(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: &[usize],
    pad: &[usize],
    rank: usize,
    tally: &mut OpTally,
) -> Result<Tensor, ExecError> {
    let xd = x.shape().dims();
    let wd = w.shape().dims();
    if xd.len() != rank + 1 || wd.len() != rank + 2 || wd[1] != xd[0] {
        return Err(ExecError::ShapeMismatch(format!(
            "conv{rank}d input {} incompatible with weight {}",
            x.shape(),
            w.shape()
        )));
    }
    let (cin, cout) = (xd[0], wd[0]);
    if let Some(b) = b {
        if b.shape().dims() != [cout] {
            return Err(ExecError::ShapeMismatch(format!(
                "bias {} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    let win = window(&xd[1..], &wd[2..], stride, pad)?;
    let xv = f32_of(x, "conv input")?;
    let wv = f32_of(w, "conv weight")?;
    let bv = b.map(|b| f32_of(b, "conv bias")).transpose()?;
    let [kd, kh, kw] = win.kernel;
    let [id, ih, iw] = win.input;
    let [od, oh, ow] = win.output;
    let mut out = Vec::with_capacity(cout * od * oh * ow);
    for oc in 0..cout {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0f32;
                    for ic in 0..cin {
                        let wbase = (oc * cin + ic) * kd * kh * kw;
                        let xbase = ic * id * ih * iw;
                        for a in 0..kd {
                            let zi = in_range(z, a, win.stride[0], win.pad[0], id);
                            for r in 0..kh {
                                let yi = in_range(y, r, win.stride[1], win.pad[1], ih);
                                for c in 0..kw {
                                    tally.macs += 1;
                                    let xi = in_range(xo, c, win.stride[2], win.pad[2], iw);
                                    if let (Some(zi), Some(yi), Some(xi)) = (zi, yi, xi) {
                                        acc += xv[xbase + (zi * ih + yi) * iw + xi]
                                            * wv[wbase + (a * kh + r) * kw + c];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(bv) = bv {
                        acc += bv[oc];
                        tally.bias_adds += 1;
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape(cout, &win, rank), out)?)
}

/// Direct 2-D convolution over a `[C, H, W]` input with an `[O, C, KH, KW]` kernel.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: &[usize],
    pad: &[usize],
) -> Result<Tensor, ExecError> {
    conv_nd(x, w, b, stride, pad, 2, &mut OpTally::default())
}

/// Direct 3-D convolution over a `[C, D, H, W]` input with an `[O, C, KD, KH, KW]` kernel.
pub fn conv3d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: &[usize],
    pad: &[usize],
) -> Result<Tensor, ExecError> {
    conv_nd(x, w, b, stride, pad, 3, &mut OpTally::default())
}

fn pool_nd(
    x: &Tensor,
    spec: &PoolSpec,
    rank: usize,
    tally: &mut OpTally,
) -> Result<Tensor, ExecError> {
    let xd = x.shape().dims();
    if xd.len() != rank + 1 {
        return Err(ExecError::ShapeMismatch(format!(
            "max-pool {rank}d expects rank {} input, got {}",
            rank + 1,
            x.shape()
        )));
    }
    let win = window(&xd[1..], &spec.window, &spec.stride, &spec.padding)?;
    let xv = f32_of(x, "pool input")?;
    let [kd, kh, kw] = win.kernel;
    let [id, ih, iw] = win.input;
    let [od, oh, ow] = win.output;
    let channels = xd[0];
    let mut out = Vec::with_capacity(channels * od * oh * ow);
    for ch in 0..channels {
        let base = ch * id * ih * iw;
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best: Option<f32> = None;
                    for a in 0..kd {
                        let zi = in_range(z, a, win.stride[0], win.pad[0], id);
                        for r in 0..kh {
                            let yi = in_range(y, r, win.stride[1], win.pad[1], ih);
                            for c in 0..kw {
                                let xi = in_range(xo, c, win.stride[2], win.pad[2], iw);
                                let v = match (zi, yi, xi) {
                                    (Some(zi), Some(yi), Some(xi)) => {
                                        xv[base + (zi * ih + yi) * iw + xi]
                                    }
                                    _ => f32::NEG_INFINITY,
                                };
                                best = Some(match best {
                                    None => v,
                                    Some(m) => {
                                        tally.pool_comparisons += 1;
                                        if v > m {
                                            v
                                        } else {
                                            m
                                        }
                                    }
                                });
                            }
                        }
                    }
                    out.push(best.unwrap_or(f32::NEG_INFINITY));
                }
            }
        }
    }
    Ok(Tensor::from_f32(out_shape(channels, &win, rank), out)?)
}

/// Max pooling over 2 or 3 spatial axes. Padded positions never win.
pub fn pool_forward(x: &Tensor, spec: &PoolSpec, dims: usize) -> Result<Tensor, ExecError> {
    if !(2..=3).contains(&dims) {
        return Err(ExecError::ShapeMismatch(format!("pooling over {dims} axes")));
    }
    pool_nd(x, spec, dims, &mut OpTally::default())
}

fn dense_impl(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    tally: &mut OpTally,
) -> Result<Tensor, ExecError> {
    let wd = w.shape().dims();
    if wd.len() != 2 || x.shape().dims() != [wd[1]] {
        return Err(ExecError::ShapeMismatch(format!(
            "dense input {} incompatible with weight {}",
            x.shape(),
            w.shape()
        )));
    }
    let (outs, ins) = (wd[0], wd[1]);
    if let Some(b) = b {
        if b.shape().dims() != [outs] {
            return Err(ExecError::ShapeMismatch(format!(
                "bias {} does not match {outs} outputs",
                b.shape()
            )));
        }
    }
    let xv = f32_of(x, "dense input")?;
    let wv = f32_of(w, "dense weight")?;
    let bv = b.map(|b| f32_of(b, "dense bias")).transpose()?;
    let mut out = Vec::with_capacity(outs);
    for o in 0..outs {
        let row = &wv[o * ins..(o + 1) * ins];
        let mut acc = 0.0f32;
        for (wi, xi) in row.iter().zip(xv) {
            acc += wi * xi;
        }
        tally.macs += ins as u64;
        if let Some(bv) = bv {
            acc += bv[o];
            tally.bias_adds += 1;
        }
        out.push(acc);
    }
    Ok(Tensor::vector(&out))
}

/// `y[o] = sum_i w[o,i] * x[i] + b[o]`, summed in ascending `i`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor, ExecError> {
    dense_impl(x, w, b, &mut OpTally::default())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    ReLU,
    LeakyReLU(f32),
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::ReLU => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::LeakyReLU(alpha) => {
                if v < 0.0 {
                    alpha * v
                } else {
                    v
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

fn map_elements(
    x: &Tensor,
    f: impl Fn(f32) -> f32,
    counter: &mut u64,
) -> Result<Tensor, ExecError> {
    let xv = f32_of(x, "elementwise input")?;
    *counter += xv.len() as u64;
    Ok(Tensor::from_f32(x.shape().clone(), xv.iter().map(|&v| f(v)).collect())?)
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Result<Tensor, ExecError> {
    map_elements(x, |v| kind.apply(v), &mut 0)
}

/// 1.0 where `v > theta` (strictly), else 0.0.
pub fn threshold_forward(x: &Tensor, theta: f32) -> Result<Tensor, ExecError> {
    map_elements(x, |v| threshold(v, theta), &mut 0)
}

#[inline]
pub fn threshold(v: f32, theta: f32) -> f32 {
    if v > theta {
        1.0
    } else {
        0.0
    }
}

/// Concatenates along `axis` in argument order.
pub fn concat_forward(xs: &[&Tensor], axis: usize) -> Result<Tensor, ExecError> {
    let first = xs.first().ok_or_else(|| ExecError::ShapeMismatch("concat of nothing".into()))?;
    let dims = first.shape().dims();
    if axis >= dims.len() {
        return Err(ExecError::ShapeMismatch(format!("concat axis {axis} out of range")));
    }
    let mut out_dims = dims.to_vec();
    out_dims[axis] = 0;
    for x in xs {
        let d = x.shape().dims();
        let ok = d.len() == dims.len()
            && d.iter().zip(dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(ExecError::ShapeMismatch(format!(
                "cannot concat {} with {} on axis {axis}",
                x.shape(),
                first.shape()
            )));
        }
        out_dims[axis] += d[axis];
    }
    let outer: usize = dims[..axis].iter().product();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk: usize = x.shape().dims()[axis..].iter().product();
            let xv = f32_of(x, "concat input")?;
            out.extend_from_slice(&xv[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_f32(Shape::new(out_dims)?, out)?)
}

/// Row-major reshape to rank 1.
pub fn flatten_forward(x: &Tensor) -> Result<Tensor, ExecError> {
    Ok(x.clone().reshape(shape![x.len()])?)
}

/// Encoder latent split into mean and log-variance halves.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentOutput {
    pub mu: [f32; 3],
    pub logvar: [f32; 3],
}

impl LatentOutput {
    /// Splits a 6-element encoder output (`mu` first).
    pub fn from_encoder_output(t: &Tensor) -> Result<Self, ExecError> {
        let v = f32_of(t, "latent")?;
        if v.len() != 6 {
            return Err(ExecError::ShapeMismatch(format!(
                "latent output must have 6 elements, got {}",
                v.len()
            )));
        }
        Ok(LatentOutput { mu: [v[0], v[1], v[2]], logvar: [v[3], v[4], v[5]] })
    }
}

/// Sampling noise for the host-side reparameterisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Zero,
    Given([f32; 3]),
}

/// `z = mu + exp(0.5 * logvar) * eps`, run on the host after the encoder.
pub fn vae_host_postprocess(latent: &LatentOutput, eps: Noise) -> [f32; 3] {
    let eps = match eps {
        Noise::Zero => return latent.mu,
        Noise::Given(e) => e,
    };
    let mut z = [0.0; 3];
    for i in 0..3 {
        let sigma = (0.5 * latent.logvar[i]).exp();
        z[i] = latent.mu[i] + sigma * eps[i];
    }
    z
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_classify(logits: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in logits.iter().enumerate() {
        match best {
            Some((_, m)) if v <= m => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn weights_for<'g>(
    g: &'g Graph,
    node: &Node,
    has_bias: bool,
) -> Result<(&'g Tensor, Option<&'g Tensor>), ExecError> {
    let wn = weight_name(&node.id);
    let w = g.weight(&wn).ok_or(ExecError::MissingWeight(wn))?;
    let b = if has_bias {
        let bn = bias_name(&node.id);
        Some(g.weight(&bn).ok_or(ExecError::MissingWeight(bn))?)
    } else {
        None
    };
    Ok((w, b))
}

fn conv_layer(
    g: &Graph,
    node: &Node,
    spec: &ConvSpec,
    x: &Tensor,
    rank: usize,
    tally: &mut OpTally,
) -> Result<Tensor, ExecError> {
    let (w, b) = weights_for(g, node, spec.has_bias)?;
    conv_nd(x, w, b, &spec.stride, &spec.padding, rank, tally)
}

/// Executes a single node given its resolved inputs.
pub fn execute_node(
    g: &Graph,
    node: &Node,
    inputs: &[&Tensor],
    tally: &mut OpTally,
) -> Result<Tensor, ExecError> {
    let x = inputs[0];
    match &node.layer {
        LayerSpec::Conv2D(c) => conv_layer(g, node, c, x, 2, tally),
        LayerSpec::Conv3D(c) => conv_layer(g, node, c, x, 3, tally),
        LayerSpec::MaxPool2D(p) => pool_nd(x, p, 2, tally),
        LayerSpec::MaxPool3D(p) => pool_nd(x, p, 3, tally),
        LayerSpec::Dense(d) => {
            let (w, b) = weights_for(g, node, d.has_bias)?;
            dense_impl(x, w, b, tally)
        }
        LayerSpec::ReLU => map_elements(x, |v| Activation::ReLU.apply(v), &mut tally.activations),
        LayerSpec::LeakyReLU { alpha } => {
            let a = Activation::LeakyReLU(*alpha);
            map_elements(x, |v| a.apply(v), &mut tally.activations)
        }
        LayerSpec::Sigmoid => {
            map_elements(x, |v| Activation::Sigmoid.apply(v), &mut tally.activations)
        }
        LayerSpec::GreaterThan { theta } => {
            let t = *theta;
            map_elements(x, |v| threshold(v, t), &mut tally.threshold_compares)
        }
        LayerSpec::Concat { axis } => {
            let out = concat_forward(inputs, *axis)?;
            tally.moved_elements += out.len() as u64;
            Ok(out)
        }
        LayerSpec::Flatten => {
            tally.moved_elements += x.len() as u64;
            flatten_forward(x)
        }
    }
}

/// Node-at-a-time execution of one inference.
///
/// Intermediate values are dropped once no later node consumes them.
pub struct Executor<'g> {
    graph: &'g Graph,
    order: Vec<usize>,
    position: usize,
    values: HashMap<String, Tensor>,
    remaining_uses: HashMap<String, usize>,
    convention: OpCountConvention,
    trace: Option<ExecutionTrace>,
}

impl<'g> Executor<'g> {
    pub fn new(
        graph: &'g Graph,
        inputs: &NamedTensors,
        instrument: bool,
        convention: OpCountConvention,
    ) -> Result<Self, ExecError> {
        let ids = topological_order(graph)?;
        let index: HashMap<&str, usize> =
            graph.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let order = ids.iter().map(|id| index[id.as_str()]).collect();
        let mut values = HashMap::new();
        for decl in &graph.inputs {
            let t = inputs.get(&decl.name).ok_or_else(|| ExecError::MissingInput(decl.name.clone()))?;
            if t.shape() != &decl.shape {
                return Err(ExecError::ShapeMismatch(format!(
                    "input `{}` has shape {}, graph declares {}",
                    decl.name,
                    t.shape(),
                    decl.shape
                )));
            }
            f32_of(t, &decl.name)?;
            values.insert(decl.name.clone(), t.clone());
        }
        let mut remaining_uses: HashMap<String, usize> = HashMap::new();
        for node in &graph.nodes {
            for i in &node.inputs {
                *remaining_uses.entry(i.clone()).or_default() += 1;
            }
        }
        for out in &graph.outputs {
            *remaining_uses.entry(out.clone()).or_default() += 1;
        }
        Ok(Executor {
            graph,
            order,
            position: 0,
            values,
            remaining_uses,
            convention,
            trace: instrument.then(ExecutionTrace::default),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.position >= self.order.len()
    }

    /// Number of nodes already executed.
    pub fn progress(&self) -> usize {
        self.position
    }

    pub fn total_nodes(&self) -> usize {
        self.order.len()
    }

    /// Runs the next node. Returns `false` once every node has run.
    pub fn step(&mut self) -> Result<bool, ExecError> {
        let Some(&idx) = self.order.get(self.position) else {
            return Ok(false);
        };
        let node = &self.graph.nodes[idx];
        let started = Instant::now();
        let mut tally = OpTally::default();
        let output = {
            let ins: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|i| self.values.get(i).ok_or_else(|| ExecError::MissingInput(i.clone())))
                .collect::<Result<_, _>>()?;
            execute_node(self.graph, node, &ins, &mut tally)?
        };
        let seconds = started.elapsed().as_secs_f64();
        for i in &node.inputs {
            if let Some(n) = self.remaining_uses.get_mut(i) {
                *n -= 1;
                if *n == 0 {
                    self.values.remove(i);
                }
            }
        }
        if let Some(trace) = &mut self.trace {
            trace.nodes.push(NodeTrace {
                node: node.id.clone(),
                output: output.clone(),
                tally,
                ops: tally.weighted(&self.convention),
                seconds,
            });
        }
        self.values.insert(node.id.clone(), output);
        self.position += 1;
        Ok(!self.is_finished())
    }

    pub fn run_to_end(&mut self) -> Result<(), ExecError> {
        while self.step()? {}
        Ok(())
    }

    /// Graph outputs in declaration order. Fails if nodes are still pending.
    pub fn finish(mut self) -> Result<RunOutput, ExecError> {
        self.run_to_end()?;
        let outputs = self
            .graph
            .outputs
            .iter()
            .map(|o| self.values.get(o).cloned().ok_or_else(|| ExecError::MissingInput(o.clone())))
            .collect::<Result<_, _>>()?;
        Ok(RunOutput { outputs, trace: self.trace })
    }
}

/// Runs the whole graph with the default op-count convention.
pub fn run_graph(
    g: &Graph,
    inputs: &NamedTensors,
    instrument: bool,
) -> Result<RunOutput, ExecError> {
    run_graph_with(g, inputs, instrument, OpCountConvention::default())
}

pub fn run_graph_with(
    g: &Graph,
    inputs: &NamedTensors,
    instrument: bool,
    convention: OpCountConvention,
) -> Result<RunOutput, ExecError> {
    Executor::new(g, inputs, instrument, convention)?.finish()
}

/// Convenience for single-input graphs.
pub fn single_input(g: &Graph, t: Tensor) -> NamedTensors {
    let mut m = NamedTensors::new();
    if let Some(decl) = g.inputs.first() {
        m.insert(decl.name.clone(), t);
    }
    m
}
