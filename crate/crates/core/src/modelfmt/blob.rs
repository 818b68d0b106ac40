//! Weight blob layout (all integers little-endian):
//!
//! ```text
//! "ONIW"  u32 entry_count
//! entry:  u32 name_len, name (UTF-8), u8 dtype, u8 rank, rank x u32 dims, payload
//! ```
//!
//! dtype 0 is fp32 (4 bytes per element), dtype 1 is int8.

use std::collections::BTreeMap;

use super::ModelError;
use crate::graph::{Graph, Shape, Tensor, TensorData};

pub const BLOB_MAGIC: [u8; 4] = *b"ONIW";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_I8: u8 = 1;

/// Serializes tensors in the iteration order given.
pub fn write_weight_blob<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&BLOB_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.shape().dims();
        match t.data() {
            TensorData::F32(_) => out.push(DTYPE_F32),
            TensorData::I8(_) => out.push(DTYPE_I8),
        }
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match t.data() {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        }
    }
    out
}

/// All weights attached to `g`, in name order.
pub fn save_weight_blob(g: &Graph) -> Vec<u8> {
    write_weight_blob(g.weights.iter().map(|(n, t)| (n.as_str(), t)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ModelError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes every entry of a blob, keyed by name.
pub fn read_weight_blob(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, ModelError> {
    if bytes.len() < 4 || bytes[..4] != BLOB_MAGIC {
        return Err(ModelError::BadMagic(bytes.iter().take(4).copied().collect()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| ModelError::parse(format!("byte {}", r.pos), e.to_string()))?
            .to_string();
        let code = r.u8()?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let shape = Shape::new(dims)
            .map_err(|e| ModelError::parse(format!("tensor `{name}`"), e.to_string()))?;
        let n = shape.numel();
        let data = match code {
            DTYPE_F32 => {
                let raw = r.take(n.checked_mul(4).ok_or(ModelError::Truncated(r.pos))?)?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            DTYPE_I8 => TensorData::I8(r.take(n)?.iter().map(|&b| b as i8).collect()),
            code => return Err(ModelError::UnknownDType { name, code }),
        };
        let tensor = Tensor::new(shape, data).expect("payload length follows dims");
        if out.insert(name.clone(), tensor).is_some() {
            return Err(ModelError::DuplicateTensor(name));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::parse(format!("byte {}", r.pos), "trailing bytes after last entry"));
    }
    Ok(out)
}

/// Attaches blob tensors to every weight slot of `g`. Dims must match exactly.
pub fn load_weight_blob(bytes: &[u8], g: &Graph) -> Result<Graph, ModelError> {
    let mut tensors = read_weight_blob(bytes)?;
    let mut out = g.clone();
    out.weights.clear();
    for (name, expected) in g.weight_slots() {
        let t = tensors.remove(&name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
        if t.shape() != &expected {
            return Err(ModelError::ShapeMismatch {
                name,
                expected,
                found: t.shape().to_string(),
            });
        }
        out.weights.insert(name, t);
    }
    if let Some(extra) = tensors.into_keys().next() {
        return Err(ModelError::UnexpectedTensor(extra));
    }
    Ok(out)
}
