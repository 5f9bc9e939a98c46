//! Datasets: CIFAR-10 binary batches, synthetic image classes, batching and
//! train/validation splitting.

mod cifar;
mod synth;

pub use cifar::{
    decode_records, encode_records, load_cifar10, write_cifar_batch, CIFAR_CLASSES, CIFAR_RECORD_BYTES,
    CIFAR_SIDE,
};
pub use synth::{synth_dataset, SynthGenerator};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::{one_hot, Samples};
use crate::tensor::Tensor;

/// Images (N, H, W, C) with values in [0, 1] and their class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.batch_len() != labels.len() && !(labels.is_empty() && images.is_empty()) {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.batch_len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Format(format!("label {bad} >= class count {classes}")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.images.sample_shape()
    }

    pub fn samples(&self) -> Samples<'_> {
        Samples::new(&self.images, &self.labels)
    }

    /// The listed samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Index batches over `n` samples. With `shuffle` the order is a fresh
/// permutation drawn from `rng`; the final short batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Mini-batches of (images, one-hot labels).
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> impl Iterator<Item = (Tensor, Tensor)> + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch_indices(dataset.len(), batch_size, shuffle, &mut rng)
        .into_iter()
        .map(move |idx| {
            let images = dataset.images.gather(&idx);
            let mut labels = Vec::with_capacity(idx.len() * dataset.classes);
            for &i in &idx {
                labels.extend(one_hot(dataset.labels[i], dataset.classes));
            }
            let labels =
                Tensor::new(vec![idx.len(), dataset.classes], labels).expect("sized one-hot rows");
            (images, labels)
        })
}

/// Deterministic disjoint split; `round(val_fraction · N)` samples go to
/// the validation side.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), val_fraction, seed);
    Ok((dataset.subset(&train_idx), dataset.subset(&val_idx)))
}

/// Index sets of [`split`], each in ascending order.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}
