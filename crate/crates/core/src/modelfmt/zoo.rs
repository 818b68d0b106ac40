//! The six onboard networks, in their deployed form.
//!
//! Deployment-time modifications are already applied: the MMS classifiers
//! end at raw logits (no final sigmoid), CNetPlusScalar uses ReLU instead
//! of LeakyReLU, the VAE encoder stops at the 6-element latent
//! pre-activation, and the six ESPERTA models run as parallel branches of
//! one graph.
//!
//! LogisticNet is pool(2x2x2) -> dense(2048 -> 4), the only layout that gives
//! 8,196 parameters on a 32x16x32 input. The VAE encoder, CNetPlusScalar,
//! ReducedNet and BaselineNet layer dimensions are reconstructions sized so
//! their parameter counts equal the published ones; their op counts differ
//! and are reported as deviations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{load_weight_blob, ModelError, ModelFile, ModelMetadata};
use crate::graph::{
    ConvSpec, DenseSpec, Graph, LayerSpec, Node, PoolSpec, Shape, Tensor,
};
use crate::shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ZooModelId {
    VaeEncoder,
    CnetPlusScalar,
    MultiEsperta,
    LogisticNet,
    ReducedNet,
    BaselineNet,
}

impl ZooModelId {
    pub const ALL: [ZooModelId; 6] = [
        ZooModelId::VaeEncoder,
        ZooModelId::CnetPlusScalar,
        ZooModelId::MultiEsperta,
        ZooModelId::LogisticNet,
        ZooModelId::ReducedNet,
        ZooModelId::BaselineNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ZooModelId::VaeEncoder => "vae_encoder",
            ZooModelId::CnetPlusScalar => "cnet_plus_scalar",
            ZooModelId::MultiEsperta => "multi_esperta",
            ZooModelId::LogisticNet => "logistic_net",
            ZooModelId::ReducedNet => "reduced_net",
            ZooModelId::BaselineNet => "baseline_net",
        }
    }

    /// Published (parameters, operations) for the deployed network.
    pub fn reference_counts(self) -> (u64, u64) {
        match self {
            ZooModelId::VaeEncoder => (395_692, 83_417_100),
            ZooModelId::CnetPlusScalar => (3_061_966, 918_241_400),
            ZooModelId::MultiEsperta => (24, 60),
            ZooModelId::LogisticNet => (8_196, 30_720),
            ZooModelId::ReducedNet => (44_624, 502_961),
            ZooModelId::BaselineNet => (915_492, 110_541_696),
        }
    }

    /// Whether the topology is fully determined by the published counts.
    pub fn is_exact_topology(self) -> bool {
        matches!(self, ZooModelId::MultiEsperta | ZooModelId::LogisticNet)
    }
}

impl fmt::Display for ZooModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZooModelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ZooModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown zoo model `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightInit {
    /// Slots left empty.
    None,
    Zeros,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, ChaCha8 stream, slots in node order.
    SeededUniform(u64),
    /// A weight blob in the `ONIW` format.
    FromBlob(Vec<u8>),
}

/// Placeholder decision thresholds for the six ESPERTA branches.
pub const ESPERTA_THRESHOLDS: [f32; 6] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

fn conv(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rank: usize) -> ConvSpec {
    ConvSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: vec![k; rank],
        stride: vec![stride; rank],
        padding: vec![pad; rank],
        has_bias: true,
    }
}

fn pool(k: usize, rank: usize) -> PoolSpec {
    PoolSpec { window: vec![k; rank], stride: vec![k; rank], padding: vec![] }
}

fn dense(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Dense(DenseSpec { in_features: i, out_features: o, has_bias: true })
}

/// Appends `layers` as a chain after `from`; returns the id of the last node.
fn chain(g: &mut Graph, from: &str, layers: Vec<(&str, LayerSpec)>) -> String {
    let mut prev = from.to_string();
    for (id, layer) in layers {
        g.nodes.push(Node { id: id.to_string(), layer, inputs: vec![prev] });
        prev = id.to_string();
    }
    prev
}

fn vae_encoder() -> Graph {
    let mut g = Graph::new();
    g.add_input("image", shape![3, 128, 256]);
    let trunk = chain(
        &mut g,
        "image",
        vec![
            ("conv1", LayerSpec::Conv2D(conv(3, 16, 3, 2, 1, 2))),
            ("relu1", LayerSpec::ReLU),
            ("conv2", LayerSpec::Conv2D(conv(16, 24, 3, 2, 1, 2))),
            ("relu2", LayerSpec::ReLU),
            ("conv3", LayerSpec::Conv2D(conv(24, 32, 3, 2, 1, 2))),
            ("relu3", LayerSpec::ReLU),
            ("conv4", LayerSpec::Conv2D(conv(32, 32, 3, 2, 1, 2))),
            ("relu4", LayerSpec::ReLU),
            ("pool", LayerSpec::MaxPool2D(pool(2, 2))),
            ("flatten", LayerSpec::Flatten),
            ("fc1", dense(1024, 340)),
            ("relu5", LayerSpec::ReLU),
            ("fc2", dense(340, 78)),
            ("relu6", LayerSpec::ReLU),
        ],
    );
    g.add_node("mu", dense(78, 3), [trunk.as_str()]);
    g.add_node("logvar", dense(78, 3), [trunk.as_str()]);
    g.add_node("latent", LayerSpec::Concat { axis: 0 }, ["mu", "logvar"]);
    g.add_output("latent");
    g
}

fn cnet_plus_scalar() -> Graph {
    let mut g = Graph::new();
    g.add_input("image", shape![1, 128, 128]);
    g.add_input("background", shape![1]);
    let features = chain(
        &mut g,
        "image",
        vec![
            ("conv1", LayerSpec::Conv2D(conv(1, 7, 3, 2, 1, 2))),
            ("relu1", LayerSpec::ReLU),
            ("pool1", LayerSpec::MaxPool2D(pool(2, 2))),
            ("conv2", LayerSpec::Conv2D(conv(7, 16, 3, 1, 1, 2))),
            ("relu2", LayerSpec::ReLU),
            ("pool2", LayerSpec::MaxPool2D(pool(2, 2))),
            ("flatten", LayerSpec::Flatten),
        ],
    );
    g.add_node("with_background", LayerSpec::Concat { axis: 0 }, [features.as_str(), "background"]);
    let out = chain(
        &mut g,
        "with_background",
        vec![
            ("fc1", dense(4097, 737)),
            ("relu3", LayerSpec::ReLU),
            ("fc2", dense(737, 55)),
            ("relu4", LayerSpec::ReLU),
            ("fc3", dense(55, 1)),
        ],
    );
    g.add_output(out);
    g
}

fn multi_esperta(thresholds: &[f32; 6]) -> Graph {
    let mut g = Graph::new();
    g.add_input("x", shape![3]);
    let mut heads = Vec::new();
    for (i, &theta) in thresholds.iter().enumerate() {
        let fc = format!("b{i}_fc");
        let sig = format!("b{i}_sig");
        let gt = format!("b{i}_gt");
        g.add_node(fc.clone(), dense(3, 1), ["x"]);
        g.add_node(sig.clone(), LayerSpec::Sigmoid, [fc]);
        g.add_node(gt.clone(), LayerSpec::GreaterThan { theta }, [sig]);
        heads.push(gt);
    }
    g.add_node("decisions", LayerSpec::Concat { axis: 0 }, heads);
    g.add_output("decisions");
    g
}

fn logistic_net() -> Graph {
    let mut g = Graph::new();
    g.add_input("x", shape![1, 32, 16, 32]);
    let out = chain(
        &mut g,
        "x",
        vec![
            ("pool", LayerSpec::MaxPool3D(pool(2, 3))),
            ("flatten", LayerSpec::Flatten),
            ("fc", dense(2048, 4)),
        ],
    );
    g.add_output(out);
    g
}

fn mms_conv_net(c1: usize, c2: usize, hidden: [usize; 2]) -> Graph {
    let mut g = Graph::new();
    g.add_input("x", shape![1, 32, 16, 32]);
    let flat = c2 * 8 * 4 * 8;
    let out = chain(
        &mut g,
        "x",
        vec![
            ("conv1", LayerSpec::Conv3D(conv(1, c1, 3, 1, 1, 3))),
            ("relu1", LayerSpec::ReLU),
            ("pool1", LayerSpec::MaxPool3D(pool(2, 3))),
            ("conv2", LayerSpec::Conv3D(conv(c1, c2, 3, 1, 1, 3))),
            ("relu2", LayerSpec::ReLU),
            ("pool2", LayerSpec::MaxPool3D(pool(2, 3))),
            ("flatten", LayerSpec::Flatten),
            ("fc1", dense(flat, hidden[0])),
            ("relu3", LayerSpec::ReLU),
            ("fc2", dense(hidden[0], hidden[1])),
            ("relu4", LayerSpec::ReLU),
            ("fc3", dense(hidden[1], 4)),
        ],
    );
    g.add_output(out);
    g
}

fn topology(id: ZooModelId) -> Graph {
    match id {
        ZooModelId::VaeEncoder => vae_encoder(),
        ZooModelId::CnetPlusScalar => cnet_plus_scalar(),
        ZooModelId::MultiEsperta => multi_esperta(&ESPERTA_THRESHOLDS),
        ZooModelId::LogisticNet => logistic_net(),
        ZooModelId::ReducedNet => mms_conv_net(4, 3, [54, 45]),
        ZooModelId::BaselineNet => mms_conv_net(6, 16, [222, 14]),
    }
}

fn fill_seeded(g: &mut Graph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in &g.nodes {
        let Some((wdims, bias)) = node.layer.weight_shapes() else { continue };
        let fan_in: usize = wdims[1..].iter().product();
        let bound = 1.0 / (fan_in as f32).sqrt();
        let mut draw = |shape: Shape| {
            let v = (0..shape.numel()).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_f32(shape, v).expect("length matches")
        };
        let w = draw(Shape::new(wdims).expect("zoo weight dims positive"));
        g.weights.insert(crate::graph::weight_name(&node.id), w);
        if let Some(len) = bias {
            let b = draw(shape![len]);
            g.weights.insert(crate::graph::bias_name(&node.id), b);
        }
    }
}

/// Builds a zoo network and attaches weights per `init`.
pub fn build_zoo_model(id: ZooModelId, init: &WeightInit) -> Result<Graph, ModelError> {
    let mut g = topology(id);
    match init {
        WeightInit::None => {}
        WeightInit::Zeros => {
            for (name, shape) in g.weight_slots() {
                g.weights.insert(name, Tensor::zeros(shape));
            }
        }
        WeightInit::SeededUniform(seed) => fill_seeded(&mut g, *seed),
        WeightInit::FromBlob(bytes) => g = load_weight_blob(bytes, &g)?,
    }
    Ok(g)
}

/// Zoo network wrapped with its published reference counts.
pub fn zoo_model_file(id: ZooModelId) -> ModelFile {
    let (params, ops) = id.reference_counts();
    let description = if id.is_exact_topology() {
        "deployed topology"
    } else {
        "reconstructed topology sized to the published parameter count"
    };
    ModelFile::new(
        id.name(),
        topology(id),
        ModelMetadata {
            description: Some(description.to_string()),
            reference_params: Some(params),
            reference_ops: Some(ops),
            quant_params: None,
        },
    )
}

/// Multi-ESPERTA with caller-supplied thresholds (weights still come from `init`).
pub fn multi_esperta_with_thresholds(
    thresholds: &[f32; 6],
    init: &WeightInit,
) -> Result<Graph, ModelError> {
    let mut g = build_zoo_model(ZooModelId::MultiEsperta, init)?;
    let weights = std::mem::take(&mut g.weights);
    g = multi_esperta(thresholds);
    g.weights = weights;
    Ok(g)
}

/// Splits a multi-ESPERTA graph into its six standalone single-branch models.
pub fn split_multi_esperta(g: &Graph) -> Vec<Graph> {
    (0..6)
        .map(|i| {
            let prefix = format!("b{i}_");
            let mut branch = Graph::new();
            branch.inputs = g.inputs.clone();
            for node in g.nodes.iter().filter(|n| n.id.starts_with(&prefix)) {
                branch.nodes.push(node.clone());
            }
            branch.add_output(format!("b{i}_gt"));
            branch.weights = g
                .weights
                .iter()
                .filter(|(k, _)| k.starts_with(&prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            branch
        })
        .collect()
}
