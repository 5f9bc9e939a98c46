//! CIFAR-10 binary batches: each record is one label byte followed by the
//! red, green and blue planes of a 32 × 32 image, row-major.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Decode planar records of (H, W, C) images into an (N, H, W, C) dataset.
pub fn decode_records(bytes: &[u8], sample_shape: [usize; 3], classes: usize) -> Result<Dataset> {
    let [h, w, c] = sample_shape;
    let plane = h * w;
    let record = 1 + plane * c;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {record}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut data = vec![0.0; n * plane * c];
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[0] as usize;
        if label >= classes {
            return Err(Error::Format(format!("record {i}: label {label} >= {classes}")));
        }
        labels.push(label);
        let out = &mut data[i * plane * c..(i + 1) * plane * c];
        for ch in 0..c {
            let src = &rec[1 + ch * plane..1 + (ch + 1) * plane];
            for (p, &b) in src.iter().enumerate() {
                out[p * c + ch] = b as f64 / 255.0;
            }
        }
    }
    let images = Tensor::new(vec![n, h, w, c], data)?;
    Dataset::new(images, labels, classes)
}

/// Inverse of [`decode_records`]; pixel values are rounded to the nearest
/// multiple of 1/255.
pub fn encode_records(dataset: &Dataset) -> Result<Vec<u8>> {
    let (h, w, c) = match dataset.sample_shape() {
        &[h, w, c] => (h, w, c),
        other => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                actual: other.to_vec(),
            })
        }
    };
    let plane = h * w;
    let mut out = Vec::with_capacity(dataset.len() * (1 + plane * c));
    for (i, &label) in dataset.labels.iter().enumerate() {
        let label = u8::try_from(label)
            .map_err(|_| Error::Format(format!("label {label} does not fit in a byte")))?;
        out.push(label);
        let img = dataset.images.sample(i);
        for ch in 0..c {
            for p in 0..plane {
                out.push((img[p * c + ch].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_cifar_batch(path: &Path, dataset: &Dataset) -> Result<()> {
    let bytes = encode_records(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_batch(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, [CIFAR_SIDE, CIFAR_SIDE, 3], CIFAR_CLASSES)
}

/// Load the five training batches and the test batch from `dir` (or from its
/// `cifar-10-batches-bin` subdirectory).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested.as_path() } else { dir };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in TRAIN_FILES {
        let part = read_batch(&dir.join(name))?;
        labels.extend(part.labels);
        images.extend(part.images.into_data());
    }
    let n = labels.len();
    let train = Dataset::new(
        Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], images)?,
        labels,
        CIFAR_CLASSES,
    )?;
    let test = read_batch(&dir.join(TEST_FILE))?;
    if train.len() != 50_000 || test.len() != 10_000 {
        log::warn!(
            "CIFAR-10 at {} has {} training and {} test images",
            dir.display(),
            train.len(),
            test.len()
        );
    }
    Ok((train, test))
}
