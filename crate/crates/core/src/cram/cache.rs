//! Captured activations of the network being compressed, persisted per
//! (data, model) fingerprint and boundary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{to_bytes, Model};
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.json";
pub const ACTIVATIONS_FILE: &str = "activations.bin";
pub const LOGITS_FILE: &str = "logits.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub boundary: String,
    pub fingerprint: String,
    pub samples: usize,
    pub sample_shape: Vec<usize>,
    pub classes: usize,
}

/// Activations at one boundary and the source model's logits, one row per
/// sample.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub index: CacheIndex,
    /// (N, ...boundary shape).
    pub activations: Tensor,
    /// (N, K).
    pub logits: Tensor,
    /// Directory holding the files, if persisted.
    pub dir: Option<PathBuf>,
    /// Source-model forward passes spent building this cache (0 on a hit).
    pub forward_passes: usize,
}

impl ActivationCache {
    pub fn boundary(&self) -> &str {
        &self.index.boundary
    }

    pub fn len(&self) -> usize {
        self.index.samples
    }

    pub fn is_empty(&self) -> bool {
        self.index.samples == 0
    }
}

/// Hex SHA-256 over the input batch (shape and little-endian values) and
/// the source model's checkpoint bytes.
pub fn fingerprint(inputs: &Tensor, source: &Model) -> String {
    let mut h = Sha256::new();
    for &d in inputs.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in inputs.data() {
        h.update(v.to_le_bytes());
    }
    h.update(to_bytes(source));
    hex::encode(h.finalize())
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64s(path: &Path, expected: usize) -> Option<Vec<f64>> {
    let bytes = fs::read(path).ok()?;
    if bytes.len() != expected * 8 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    )
}

fn try_load(dir: &Path, expected: &CacheIndex) -> Option<ActivationCache> {
    let text = fs::read_to_string(dir.join(INDEX_FILE)).ok()?;
    let index: CacheIndex = serde_json::from_str(&text).ok()?;
    if &index != expected {
        return None;
    }
    let stride: usize = index.sample_shape.iter().product();
    let acts = read_f64s(&dir.join(ACTIVATIONS_FILE), index.samples * stride)?;
    let logits = read_f64s(&dir.join(LOGITS_FILE), index.samples * index.classes)?;
    let mut shape = vec![index.samples];
    shape.extend_from_slice(&index.sample_shape);
    Some(ActivationCache {
        activations: Tensor::new(shape, acts).ok()?,
        logits: Tensor::new(vec![index.samples, index.classes], logits).ok()?,
        index,
        dir: Some(dir.to_path_buf()),
        forward_passes: 0,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Activations of `source` at `boundary` for every sample of `inputs`, plus
/// its logits.
///
/// With a `cache_dir` the result lives in
/// `<cache_dir>/<fingerprint>/<boundary>/`; a complete entry with a matching
/// index is loaded without running the model, anything else is recomputed
/// and rewritten.
pub fn capture_activations(
    source: &Model,
    inputs: &Tensor,
    boundary: &str,
    cache_dir: Option<&Path>,
) -> Result<ActivationCache> {
    let expected = CacheIndex {
        boundary: boundary.to_owned(),
        fingerprint: String::new(),
        samples: inputs.batch_len(),
        sample_shape: source.spec().boundary_shape(boundary)?,
        classes: source.classes(),
    };
    let Some(root) = cache_dir else {
        return compute(source, inputs, expected, None);
    };
    let expected = CacheIndex {
        fingerprint: fingerprint(inputs, source),
        ..expected
    };
    let dir = root.join(&expected.fingerprint).join(boundary);
    if let Some(hit) = try_load(&dir, &expected) {
        log::debug!("activation cache hit at {}", dir.display());
        return Ok(hit);
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cache = compute(source, inputs, expected, Some(dir.clone()))?;
    write_file(&dir.join(ACTIVATIONS_FILE), &f64_bytes(cache.activations.data()))?;
    write_file(&dir.join(LOGITS_FILE), &f64_bytes(cache.logits.data()))?;
    // The index goes last so an interrupted write never looks complete.
    write_file(
        &dir.join(INDEX_FILE),
        serde_json::to_string_pretty(&cache.index)?.as_bytes(),
    )?;
    Ok(cache)
}

fn compute(source: &Model, inputs: &Tensor, index: CacheIndex, dir: Option<PathBuf>) -> Result<ActivationCache> {
    let (logits, mut captured) = source.forward_with_capture(inputs, &[&index.boundary])?;
    let activations = captured.remove(&index.boundary).expect("requested boundary");
    Ok(ActivationCache {
        forward_passes: inputs.batch_len(),
        index,
        activations,
        logits,
        dir,
    })
}
