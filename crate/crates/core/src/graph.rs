//! Network IR: shapes, tensors, layers and the layer DAG.
//!
//! Layout is row-major and channels-first throughout. There is no batch
//! dimension; every graph describes a single-input inference.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_RANK: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: &'static str },
    #[error("tensor data has {actual} elements, shape {shape} needs {expected}")]
    DataLength { shape: Shape, expected: usize, actual: usize },
    #[error("node `{node}`: computed dimension on axis {axis} is below 1")]
    NegativeDimension { node: String, axis: usize },
    #[error("node `{node}`: {message}")]
    ShapeMismatch { node: String, message: String },
    #[error("cycle detected through nodes {0:?}")]
    CycleDetected(Vec<String>),
    #[error("node `{node}` references unknown input `{input}`")]
    UnresolvedInput { node: String, input: String },
}

/// Tensor dimensions, outermost first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self, GraphError> {
        if dims.is_empty() {
            return Err(GraphError::InvalidShape { dims, reason: "rank must be at least 1" });
        }
        if dims.len() > MAX_RANK {
            return Err(GraphError::InvalidShape { dims, reason: "rank above 5" });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(GraphError::InvalidShape { dims, reason: "every dim must be >= 1" });
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = GraphError;
    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Shorthand for building a shape from literal dims; panics on invalid input.
#[macro_export]
macro_rules! shape {
    ($($d:expr),+ $(,)?) => {
        $crate::graph::Shape::new(vec![$($d),+]).expect("valid literal shape")
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Shape, data: TensorData) -> Result<Self, GraphError> {
        let actual = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        };
        if actual != shape.numel() {
            return Err(GraphError::DataLength { expected: shape.numel(), actual, shape });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Shape, data: Vec<f32>) -> Result<Self, GraphError> {
        Tensor::new(shape, TensorData::F32(data))
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor { shape, data: TensorData::F32(vec![0.0; n]) }
    }

    /// Rank-1 fp32 tensor. Panics on an empty slice.
    pub fn vector(values: &[f32]) -> Self {
        Tensor::from_f32(shape![values.len()], values.to_vec()).expect("non-empty vector")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.shape.numel()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// fp32 payload, or `None` for int8 tensors.
    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I8(_) => None,
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I8(_) => None,
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self, GraphError> {
        Tensor::new(shape, self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub has_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub window: Vec<usize>,
    pub stride: Vec<usize>,
    #[serde(default)]
    pub padding: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub has_bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2D(ConvSpec),
    Conv3D(ConvSpec),
    MaxPool2D(PoolSpec),
    MaxPool3D(PoolSpec),
    Dense(DenseSpec),
    ReLU,
    LeakyReLU { alpha: f32 },
    Sigmoid,
    GreaterThan { theta: f32 },
    Concat { axis: usize },
    Flatten,
}

/// Layer kind without attributes; used for backend operator coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    Conv3D,
    MaxPool2D,
    MaxPool3D,
    Dense,
    ReLU,
    LeakyReLU,
    Sigmoid,
    GreaterThan,
    Concat,
    Flatten,
}

impl LayerKind {
    pub const ALL: [LayerKind; 11] = [
        LayerKind::Conv2D,
        LayerKind::Conv3D,
        LayerKind::MaxPool2D,
        LayerKind::MaxPool3D,
        LayerKind::Dense,
        LayerKind::ReLU,
        LayerKind::LeakyReLU,
        LayerKind::Sigmoid,
        LayerKind::GreaterThan,
        LayerKind::Concat,
        LayerKind::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2D => "Conv2D",
            LayerKind::Conv3D => "Conv3D",
            LayerKind::MaxPool2D => "MaxPool2D",
            LayerKind::MaxPool3D => "MaxPool3D",
            LayerKind::Dense => "Dense",
            LayerKind::ReLU => "ReLU",
            LayerKind::LeakyReLU => "LeakyReLU",
            LayerKind::Sigmoid => "Sigmoid",
            LayerKind::GreaterThan => "GreaterThan",
            LayerKind::Concat => "Concat",
            LayerKind::Flatten => "Flatten",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        LayerKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv2D(_) => LayerKind::Conv2D,
            LayerSpec::Conv3D(_) => LayerKind::Conv3D,
            LayerSpec::MaxPool2D(_) => LayerKind::MaxPool2D,
            LayerSpec::MaxPool3D(_) => LayerKind::MaxPool3D,
            LayerSpec::Dense(_) => LayerKind::Dense,
            LayerSpec::ReLU => LayerKind::ReLU,
            LayerSpec::LeakyReLU { .. } => LayerKind::LeakyReLU,
            LayerSpec::Sigmoid => LayerKind::Sigmoid,
            LayerSpec::GreaterThan { .. } => LayerKind::GreaterThan,
            LayerSpec::Concat { .. } => LayerKind::Concat,
            LayerSpec::Flatten => LayerKind::Flatten,
        }
    }

    /// Weight tensor shape and optional bias length for parameterised layers.
    pub fn weight_shapes(&self) -> Option<(Vec<usize>, Option<usize>)> {
        match self {
            LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => {
                let mut dims = vec![c.out_channels, c.in_channels];
                dims.extend_from_slice(&c.kernel);
                Some((dims, c.has_bias.then_some(c.out_channels)))
            }
            LayerSpec::Dense(d) => Some((
                vec![d.out_features, d.in_features],
                d.has_bias.then_some(d.out_features),
            )),
            _ => None,
        }
    }

    fn spatial_rank(&self) -> Option<usize> {
        match self {
            LayerSpec::Conv2D(_) | LayerSpec::MaxPool2D(_) => Some(2),
            LayerSpec::Conv3D(_) | LayerSpec::MaxPool3D(_) => Some(3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub layer: LayerSpec,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub name: String,
    pub shape: Shape,
}

pub fn weight_name(node: &str) -> String {
    format!("{node}.weight")
}

pub fn bias_name(node: &str) -> String {
    format!("{node}.bias")
}

/// Layer DAG plus the weights attached to it, keyed `<node>.weight` / `<node>.bias`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub inputs: Vec<GraphInput>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
    pub weights: BTreeMap<String, Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn add_input(&mut self, name: impl Into<String>, shape: Shape) -> &mut Self {
        self.inputs.push(GraphInput { name: name.into(), shape });
        self
    }

    pub fn add_node<S: Into<String>>(
        &mut self,
        id: impl Into<String>,
        layer: LayerSpec,
        inputs: impl IntoIterator<Item = S>,
    ) -> &mut Self {
        self.nodes.push(Node {
            id: id.into(),
            layer,
            inputs: inputs.into_iter().map(Into::into).collect(),
        });
        self
    }

    pub fn add_output(&mut self, id: impl Into<String>) -> &mut Self {
        self.outputs.push(id.into());
        self
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input(&self, name: &str) -> Option<&GraphInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// Every weight slot the layers declare, in node order.
    pub fn weight_slots(&self) -> Vec<(String, Shape)> {
        let mut slots = Vec::new();
        for node in &self.nodes {
            if let Some((w, b)) = node.layer.weight_shapes() {
                if let Ok(s) = Shape::new(w) {
                    slots.push((weight_name(&node.id), s));
                }
                if let Some(len) = b {
                    if let Ok(s) = Shape::new(vec![len]) {
                        slots.push((bias_name(&node.id), s));
                    }
                }
            }
        }
        slots
    }

    /// True when every declared weight slot has a tensor attached.
    pub fn has_all_weights(&self) -> bool {
        self.weight_slots().iter().all(|(n, _)| self.weights.contains_key(n))
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name)
    }

    pub fn kinds(&self) -> BTreeSet<LayerKind> {
        self.nodes.iter().map(|n| n.layer.kind()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, node: &str, rule: impl Into<String>) {
        self.violations.push(Violation { node: node.to_string(), rule: rule.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_axes(report: &mut ValidationReport, id: &str, what: &str, v: &[usize], rank: usize) {
    if v.len() != rank {
        report.push(id, format!("{what} needs {rank} entries, got {}", v.len()));
    }
}

fn check_layer(report: &mut ValidationReport, node: &Node) {
    let id = node.id.as_str();
    let unary = !matches!(node.layer, LayerSpec::Concat { .. });
    if unary && node.inputs.len() != 1 {
        report.push(id, format!("expects exactly 1 input, got {}", node.inputs.len()));
    }
    if !unary && node.inputs.is_empty() {
        report.push(id, "concat needs at least 1 input");
    }
    let rank = node.layer.spatial_rank();
    match &node.layer {
        LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => {
            let rank = rank.unwrap_or(0);
            check_axes(report, id, "kernel", &c.kernel, rank);
            check_axes(report, id, "stride", &c.stride, rank);
            check_axes(report, id, "padding", &c.padding, rank);
            if c.kernel.contains(&0) {
                report.push(id, "kernel dims must be >= 1");
            }
            if c.stride.contains(&0) {
                report.push(id, "stride must be >= 1");
            }
            if c.in_channels == 0 || c.out_channels == 0 {
                report.push(id, "channel counts must be >= 1");
            }
        }
        LayerSpec::MaxPool2D(p) | LayerSpec::MaxPool3D(p) => {
            let rank = rank.unwrap_or(0);
            check_axes(report, id, "window", &p.window, rank);
            check_axes(report, id, "stride", &p.stride, rank);
            if !p.padding.is_empty() {
                check_axes(report, id, "padding", &p.padding, rank);
            }
            if p.window.contains(&0) {
                report.push(id, "window dims must be >= 1");
            }
            if p.stride.contains(&0) {
                report.push(id, "stride must be >= 1");
            }
            if p.padding.iter().zip(&p.window).any(|(p, w)| p >= w) {
                report.push(id, "pool padding must be smaller than the window");
            }
        }
        LayerSpec::Dense(d) => {
            if d.in_features == 0 || d.out_features == 0 {
                report.push(id, "dense feature counts must be >= 1");
            }
        }
        LayerSpec::LeakyReLU { alpha } if !alpha.is_finite() => {
            report.push(id, "alpha must be finite");
        }
        LayerSpec::GreaterThan { theta } if !theta.is_finite() => {
            report.push(id, "theta must be finite");
        }
        _ => {}
    }
}

/// Checks every structural invariant and reports all violations found.
pub fn validate_graph(g: &Graph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut names: HashMap<&str, &'static str> = HashMap::new();
    for input in &g.inputs {
        if names.insert(input.name.as_str(), "input").is_some() {
            report.push(&input.name, "duplicate graph input name");
        }
    }
    for node in &g.nodes {
        if names.insert(node.id.as_str(), "node").is_some() {
            report.push(&node.id, "duplicate node id");
        }
    }
    for node in &g.nodes {
        check_layer(&mut report, node);
        for input in &node.inputs {
            if !names.contains_key(input.as_str()) {
                report.push(&node.id, format!("unresolved input `{input}`"));
            }
        }
    }
    for out in &g.outputs {
        if !g.nodes.iter().any(|n| &n.id == out) && g.input(out).is_none() {
            report.push(out, "unresolved graph output");
        }
    }
    if let Err(GraphError::CycleDetected(ids)) = topological_order(g) {
        for id in ids {
            report.push(&id, "node is part of a cycle");
        }
    }
    let slots: BTreeMap<String, Shape> = g.weight_slots().into_iter().collect();
    for (name, tensor) in &g.weights {
        match slots.get(name) {
            None => report.push(name, "weight does not belong to any layer slot"),
            Some(expected) if expected != tensor.shape() => report.push(
                name,
                format!("weight shape {} does not match declared {expected}", tensor.shape()),
            ),
            Some(_) => {}
        }
    }
    report
}

/// Kahn's algorithm with a min-heap on node id so ties resolve deterministically.
pub fn topological_order(g: &Graph) -> Result<Vec<String>, GraphError> {
    let index: HashMap<&str, usize> =
        g.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; g.nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (i, node) in g.nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(&src) = index.get(input.as_str()) {
                indegree[i] += 1;
                consumers[src].push(i);
            } else if g.input(input).is_none() {
                return Err(GraphError::UnresolvedInput {
                    node: node.id.clone(),
                    input: input.clone(),
                });
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse((g.nodes[i].id.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(Reverse((id, i))) = ready.pop() {
        order.push(id.to_string());
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse((g.nodes[c].id.as_str(), c)));
            }
        }
    }
    if order.len() != g.nodes.len() {
        let mut stuck: Vec<String> = g
            .nodes
            .iter()
            .zip(&indegree)
            .filter(|(_, &d)| d > 0)
            .map(|(n, _)| n.id.clone())
            .collect();
        stuck.sort();
        return Err(GraphError::CycleDetected(stuck));
    }
    Ok(order)
}

fn window_output(
    node: &str,
    input: &[usize],
    kernel: &[usize],
    stride: &[usize],
    padding: &[usize],
) -> Result<Vec<usize>, GraphError> {
    let mut out = Vec::with_capacity(input.len());
    for axis in 0..input.len() {
        let pad = padding.get(axis).copied().unwrap_or(0);
        let span = input[axis] + 2 * pad;
        if span < kernel[axis] {
            return Err(GraphError::NegativeDimension { node: node.to_string(), axis });
        }
        out.push((span - kernel[axis]) / stride[axis] + 1);
    }
    Ok(out)
}

/// Output shape of one layer given its input shapes.
pub fn layer_output_shape(node: &Node, inputs: &[&Shape]) -> Result<Shape, GraphError> {
    let mismatch = |message: String| GraphError::ShapeMismatch { node: node.id.clone(), message };
    let first = *inputs.first().ok_or_else(|| mismatch("no inputs".into()))?;
    let dims = first.dims();
    let spatial = |rank: usize| -> Result<(), GraphError> {
        if dims.len() != rank + 1 {
            return Err(mismatch(format!(
                "expects a rank-{} channels-first input, got {first}",
                rank + 1
            )));
        }
        Ok(())
    };
    let out = match &node.layer {
        LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => {
            spatial(node.layer.spatial_rank().unwrap_or(2))?;
            if dims[0] != c.in_channels {
                return Err(mismatch(format!(
                    "declared {} input channels, input has {}",
                    c.in_channels, dims[0]
                )));
            }
            let mut out = vec![c.out_channels];
            out.extend(window_output(&node.id, &dims[1..], &c.kernel, &c.stride, &c.padding)?);
            out
        }
        LayerSpec::MaxPool2D(p) | LayerSpec::MaxPool3D(p) => {
            spatial(node.layer.spatial_rank().unwrap_or(2))?;
            let mut out = vec![dims[0]];
            out.extend(window_output(&node.id, &dims[1..], &p.window, &p.stride, &p.padding)?);
            out
        }
        LayerSpec::Dense(d) => {
            if dims != [d.in_features] {
                return Err(mismatch(format!(
                    "dense expects a vector of {} features, got {first}",
                    d.in_features
                )));
            }
            vec![d.out_features]
        }
        LayerSpec::ReLU
        | LayerSpec::LeakyReLU { .. }
        | LayerSpec::Sigmoid
        | LayerSpec::GreaterThan { .. } => dims.to_vec(),
        LayerSpec::Flatten => vec![first.numel()],
        LayerSpec::Concat { axis } => {
            let axis = *axis;
            if axis >= dims.len() {
                return Err(mismatch(format!("concat axis {axis} out of range for {first}")));
            }
            let mut out = dims.to_vec();
            for s in &inputs[1..] {
                let d = s.dims();
                let compatible = d.len() == dims.len()
                    && d.iter().zip(dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(mismatch(format!("cannot concat {s} with {first} on axis {axis}")));
                }
                out[axis] += d[axis];
            }
            out
        }
    };
    Shape::new(out).map_err(|e| mismatch(e.to_string()))
}

/// Output shape of every node, keyed by node id.
pub fn infer_shapes(g: &Graph) -> Result<BTreeMap<String, Shape>, GraphError> {
    let order = topological_order(g)?;
    let mut known: HashMap<&str, Shape> =
        g.inputs.iter().map(|i| (i.name.as_str(), i.shape.clone())).collect();
    let mut result = BTreeMap::new();
    for id in &order {
        let node = g.node(id).expect("ordered id exists");
        let ins: Vec<&Shape> = node
            .inputs
            .iter()
            .map(|i| {
                known.get(i.as_str()).ok_or_else(|| GraphError::UnresolvedInput {
                    node: node.id.clone(),
                    input: i.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let out = layer_output_shape(node, &ins)?;
        known.insert(node.id.as_str(), out.clone());
        result.insert(node.id.clone(), out);
    }
    Ok(result)
}

/// Total weight and bias elements declared by the layers.
pub fn count_parameters(g: &Graph) -> u64 {
    g.weight_slots().iter().map(|(_, s)| s.numel() as u64).sum()
}

/// Scalar-operation weights used when tallying work per layer.
///
/// Pooling costs `window - 1` comparisons per output, each weighted by
/// `pool_ops_per_comparison`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountConvention {
    pub mac_ops: u64,
    pub bias_ops_per_output: u64,
    pub pool_ops_per_comparison: u64,
    pub activation_ops_per_element: u64,
    pub compare_ops_per_element: u64,
    pub concat_flatten_ops_per_element: u64,
}

impl Default for OpCountConvention {
    fn default() -> Self {
        OpCountConvention {
            mac_ops: 2,
            bias_ops_per_output: 1,
            pool_ops_per_comparison: 1,
            activation_ops_per_element: 1,
            compare_ops_per_element: 1,
            concat_flatten_ops_per_element: 0,
        }
    }
}

fn node_ops(node: &Node, out: &Shape, conv: &OpCountConvention) -> u64 {
    let n = out.numel() as u64;
    match &node.layer {
        LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => {
            let fan_in = (c.in_channels * c.kernel.iter().product::<usize>()) as u64;
            let bias = if c.has_bias { n * conv.bias_ops_per_output } else { 0 };
            n * fan_in * conv.mac_ops + bias
        }
        LayerSpec::Dense(d) => {
            let bias = if d.has_bias { n * conv.bias_ops_per_output } else { 0 };
            n * d.in_features as u64 * conv.mac_ops + bias
        }
        LayerSpec::MaxPool2D(p) | LayerSpec::MaxPool3D(p) => {
            let window = p.window.iter().product::<usize>() as u64;
            n * (window - 1) * conv.pool_ops_per_comparison
        }
        LayerSpec::ReLU | LayerSpec::LeakyReLU { .. } | LayerSpec::Sigmoid => {
            n * conv.activation_ops_per_element
        }
        LayerSpec::GreaterThan { .. } => n * conv.compare_ops_per_element,
        LayerSpec::Concat { .. } | LayerSpec::Flatten => n * conv.concat_flatten_ops_per_element,
    }
}

/// Analytical scalar-op count per node.
pub fn count_operations_per_node(
    g: &Graph,
    conv: &OpCountConvention,
) -> Result<BTreeMap<String, u64>, GraphError> {
    let shapes = infer_shapes(g)?;
    Ok(g.nodes.iter().map(|n| (n.id.clone(), node_ops(n, &shapes[&n.id], conv))).collect())
}

pub fn count_operations(g: &Graph, conv: &OpCountConvention) -> Result<u64, GraphError> {
    Ok(count_operations_per_node(g, conv)?.values().sum())
}
