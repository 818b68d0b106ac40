use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ModelError;
use crate::graph::{
    validate_graph, ConvSpec, DenseSpec, Graph, GraphInput, LayerKind, LayerSpec, Node, PoolSpec,
    Shape,
};
use crate::quantize::QuantParams;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Parameter count published for this model, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_params: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_ops: Option<u64>,
    /// Per-tensor quantization table for int8 models, keyed by tensor or edge name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant_params: Option<BTreeMap<String, QuantParams>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub version: u64,
    pub name: String,
    pub graph: Graph,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn new(name: impl Into<String>, graph: Graph, metadata: ModelMetadata) -> Self {
        ModelFile { version: FORMAT_VERSION, name: name.into(), graph, metadata }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    name: String,
    shape: Shape,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: String,
    #[serde(default = "empty_object")]
    attrs: Value,
    inputs: Vec<String>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    version: u64,
    name: String,
    inputs: Vec<InputDoc>,
    nodes: Vec<NodeDoc>,
    outputs: Vec<String>,
    #[serde(default)]
    metadata: ModelMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoAttrs {}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaAttrs {
    alpha: f32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaAttrs {
    theta: f32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisAttrs {
    axis: usize,
}

fn attrs_of(layer: &LayerSpec) -> Value {
    let v = match layer {
        LayerSpec::Conv2D(c) | LayerSpec::Conv3D(c) => serde_json::to_value(c),
        LayerSpec::MaxPool2D(p) | LayerSpec::MaxPool3D(p) => serde_json::to_value(p),
        LayerSpec::Dense(d) => serde_json::to_value(d),
        LayerSpec::LeakyReLU { alpha } => serde_json::to_value(AlphaAttrs { alpha: *alpha }),
        LayerSpec::GreaterThan { theta } => serde_json::to_value(ThetaAttrs { theta: *theta }),
        LayerSpec::Concat { axis } => serde_json::to_value(AxisAttrs { axis: *axis }),
        LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Flatten => Ok(empty_object()),
    };
    v.expect("layer attributes serialize")
}

fn layer_from_doc(doc: &NodeDoc, position: &str) -> Result<LayerSpec, ModelError> {
    let kind = LayerKind::from_name(&doc.kind)
        .ok_or_else(|| ModelError::parse(position, format!("unknown layer kind `{}`", doc.kind)))?;
    fn attrs<T: serde::de::DeserializeOwned>(v: &Value, pos: &str) -> Result<T, ModelError> {
        T::deserialize(v).map_err(|e| ModelError::parse(format!("{pos}.attrs"), e.to_string()))
    }
    let a = &doc.attrs;
    Ok(match kind {
        LayerKind::Conv2D => LayerSpec::Conv2D(attrs::<ConvSpec>(a, position)?),
        LayerKind::Conv3D => LayerSpec::Conv3D(attrs::<ConvSpec>(a, position)?),
        LayerKind::MaxPool2D => LayerSpec::MaxPool2D(attrs::<PoolSpec>(a, position)?),
        LayerKind::MaxPool3D => LayerSpec::MaxPool3D(attrs::<PoolSpec>(a, position)?),
        LayerKind::Dense => LayerSpec::Dense(attrs::<DenseSpec>(a, position)?),
        LayerKind::LeakyReLU => {
            LayerSpec::LeakyReLU { alpha: attrs::<AlphaAttrs>(a, position)?.alpha }
        }
        LayerKind::GreaterThan => {
            LayerSpec::GreaterThan { theta: attrs::<ThetaAttrs>(a, position)?.theta }
        }
        LayerKind::Concat => LayerSpec::Concat { axis: attrs::<AxisAttrs>(a, position)?.axis },
        LayerKind::ReLU | LayerKind::Sigmoid | LayerKind::Flatten => {
            attrs::<NoAttrs>(a, position)?;
            match kind {
                LayerKind::ReLU => LayerSpec::ReLU,
                LayerKind::Sigmoid => LayerSpec::Sigmoid,
                _ => LayerSpec::Flatten,
            }
        }
    })
}

/// Parses and validates a model text document.
pub fn parse_model_text(bytes: &[u8]) -> Result<ModelFile, ModelError> {
    let raw: Value = serde_json::from_slice(bytes).map_err(|e| {
        ModelError::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    if let Some(v) = raw.get("version") {
        match v.as_u64() {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(ModelError::UnsupportedVersion(other)),
            None => return Err(ModelError::parse("$.version", "version must be an integer")),
        }
    }
    let doc = ModelDoc::deserialize(&raw).map_err(|e| ModelError::parse("$", e.to_string()))?;

    let mut graph = Graph::new();
    for input in doc.inputs {
        graph.inputs.push(GraphInput { name: input.name, shape: input.shape });
    }
    for (i, node) in doc.nodes.iter().enumerate() {
        let position = format!("$.nodes[{i}]");
        let layer = layer_from_doc(node, &position)?;
        graph.nodes.push(Node { id: node.id.clone(), layer, inputs: node.inputs.clone() });
    }
    graph.outputs = doc.outputs;

    let report = validate_graph(&graph);
    if let Some(v) = report.violations.first() {
        return Err(ModelError::parse(format!("node `{}`", v.node), v.rule.clone()));
    }
    Ok(ModelFile { version: doc.version, name: doc.name, graph, metadata: doc.metadata })
}

/// Canonical text form: sorted keys, two-space indent, shortest round-trip floats,
/// trailing newline.
pub fn serialize_model_text(m: &ModelFile) -> Vec<u8> {
    let doc = ModelDoc {
        version: m.version,
        name: m.name.clone(),
        inputs: m
            .graph
            .inputs
            .iter()
            .map(|i| InputDoc { name: i.name.clone(), shape: i.shape.clone() })
            .collect(),
        nodes: m
            .graph
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                kind: n.layer.kind().name().to_string(),
                attrs: attrs_of(&n.layer),
                inputs: n.inputs.clone(),
            })
            .collect(),
        outputs: m.graph.outputs.clone(),
        metadata: m.metadata.clone(),
    };
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(&doc).expect("model document serializes");
    let mut out = serde_json::to_vec_pretty(&value).expect("json value serializes");
    out.push(b'\n');
    out
}
