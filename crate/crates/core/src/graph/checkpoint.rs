//! Binary checkpoint format.
//!
//! ```text
//! "CRAMNET1"                      8-byte magic
//! u64 LE  n                       length of the spec JSON
//! n bytes                         architecture spec, UTF-8 JSON
//! per parameterised layer, in declaration order:
//!   u64 LE count, count × f64 LE  weights
//!   u64 LE count, count × f64 LE  biases
//! ```

use std::path::Path;

use super::model::{expected_param_shapes, LayerParams, Model, ParameterSet};
use super::spec::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CRAMNET1";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let json = serde_json::to_string(model.spec()).expect("spec serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.param_count() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for blob in model.params().slices() {
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let count = self.u64(what)?;
        if count != expected as u64 {
            return Err(Error::CorruptCheckpoint(format!(
                "{what}: header says {count} values, spec implies {expected}"
            )));
        }
        let raw = self.take(expected * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic or version".into()));
    }
    let len = r.u64("spec length")?;
    let len = usize::try_from(len).map_err(|_| Error::CorruptCheckpoint("spec length".into()))?;
    let json = std::str::from_utf8(r.take(len, "spec")?)
        .map_err(|_| Error::CorruptCheckpoint("spec is not UTF-8".into()))?;
    let spec: ArchitectureSpec = serde_json::from_str(json)
        .map_err(|e| Error::CorruptCheckpoint(format!("spec: {e}")))?;
    let expected = expected_param_shapes(&spec)
        .map_err(|e| Error::CorruptCheckpoint(format!("spec: {e}")))?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, slot) in spec.layers.iter().zip(expected) {
        layers.push(match slot {
            None => None,
            Some((w_shape, units)) => {
                let w_len = w_shape.iter().product();
                let w = r.blob(w_len, &format!("`{}` weights", layer.name))?;
                let b = r.blob(units, &format!("`{}` biases", layer.name))?;
                Some(LayerParams {
                    weights: Tensor::new(w_shape, w)?,
                    biases: Tensor::new(vec![units], b)?,
                })
            }
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(spec, ParameterSet::new(layers), None)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
