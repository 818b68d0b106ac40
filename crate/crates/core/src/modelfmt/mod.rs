//! On-disk model description, weight blobs, and the built-in model zoo.
//!
//! A model is split in two files: a canonical JSON text document holding
//! the topology, and a little-endian binary blob holding the weights.

mod blob;
mod text;
pub mod zoo;

use thiserror::Error;

use crate::graph::Shape;

pub use blob::{
    load_weight_blob, read_weight_blob, save_weight_blob, write_weight_blob, BLOB_MAGIC,
    DTYPE_F32, DTYPE_I8,
};
pub use text::{parse_model_text, serialize_model_text, ModelFile, ModelMetadata, FORMAT_VERSION};
pub use zoo::{
    build_zoo_model, multi_esperta_with_thresholds, split_multi_esperta, zoo_model_file,
    WeightInit, ZooModelId, ESPERTA_THRESHOLDS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),
    #[error("bad weight blob magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("weight blob truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown dtype code {code} for tensor `{name}`")]
    UnknownDType { name: String, code: u8 },
    #[error("duplicate tensor `{0}` in weight blob")]
    DuplicateTensor(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found}, expected {expected}")]
    ShapeMismatch { name: String, expected: Shape, found: String },
    #[error("tensor `{0}` does not match any weight slot")]
    UnexpectedTensor(String),
}

impl ModelError {
    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Parse { position: position.into(), message: message.into() }
    }
}
