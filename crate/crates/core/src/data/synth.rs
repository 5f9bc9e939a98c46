//! Synthetic image classes: each class owns a prototype built from a few
//! coloured Gaussian blobs; samples are jittered, noisy copies of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::tensor::Tensor;

const BLOBS_PER_CLASS: usize = 3;
const BACKGROUND: f64 = 0.1;
const SAMPLE_STREAM: u64 = 0x5eed_da7a;

/// Deterministic generator of labelled images around fixed class prototypes.
///
/// The prototypes depend only on the construction seed, so several sample
/// streams (train, test) drawn from one generator share the same classes.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    classes: usize,
    shape: [usize; 3],
    prototypes: Vec<Vec<f64>>,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    /// Largest shift, in pixels, applied along each spatial axis.
    pub jitter: usize,
}

impl SynthGenerator {
    pub fn new(classes: usize, height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = height.min(width).max(1) as f64;
        let prototypes = (0..classes)
            .map(|_| {
                let blobs: Vec<_> = (0..BLOBS_PER_CLASS)
                    .map(|_| {
                        let cy = rng.random_range(0.0..height.max(1) as f64);
                        let cx = rng.random_range(0.0..width.max(1) as f64);
                        let sigma = rng.random_range(0.12..0.28) * side;
                        let colour: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.2..0.9)).collect();
                        (cy, cx, sigma, colour)
                    })
                    .collect();
                let mut img = vec![BACKGROUND; height * width * channels];
                for y in 0..height {
                    for x in 0..width {
                        for (cy, cx, sigma, colour) in &blobs {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            let g = (-d2 / (2.0 * sigma * sigma)).exp();
                            for (ch, a) in colour.iter().enumerate() {
                                img[(y * width + x) * channels + ch] += a * g;
                            }
                        }
                    }
                }
                img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                img
            })
            .collect();
        SynthGenerator {
            classes,
            shape: [height, width, channels],
            prototypes,
            noise: 0.2,
            jitter: 1,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    fn sample_into(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let [h, w, c] = self.shape;
        let j = self.jitter as i64;
        let dy = rng.random_range(-j..=j);
        let dx = rng.random_range(-j..=j);
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise level");
        let proto = &self.prototypes[class];
        for y in 0..h {
            let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
            for x in 0..w {
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                for ch in 0..c {
                    let v = proto[(sy * w + sx) * c + ch] + noise.sample(rng);
                    out[(y * w + x) * c + ch] = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    /// `n` samples from the stream selected by `stream_seed`; sample `i`
    /// belongs to class `i mod K`, so any prefix stays class-balanced.
    pub fn generate(&self, n: usize, stream_seed: u64) -> Dataset {
        let [h, w, c] = self.shape;
        let stride = h * w * c;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed ^ SAMPLE_STREAM);
        let mut data = vec![0.0; n * stride];
        let labels: Vec<usize> = (0..n).map(|i| i % self.classes.max(1)).collect();
        for (i, out) in data.chunks_exact_mut(stride.max(1)).enumerate().take(n) {
            self.sample_into(labels[i], &mut rng, out);
        }
        let images = Tensor::new(vec![n, h, w, c], data).expect("sized image buffer");
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }
}

/// `K · n_per_class` samples of `K` blob classes, interleaved by label.
pub fn synth_dataset(
    classes: usize,
    n_per_class: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Dataset {
    SynthGenerator::new(classes, height, width, channels, seed).generate(classes * n_per_class, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ArchitectureSpec, LayerSpec, Model};
    use crate::optim::{evaluate, train, LossKind, OptimizerConfig, StopRule, TrainOptions};

    #[test]
    fn seeded_and_balanced() {
        let a = synth_dataset(4, 5, 6, 6, 3, 9);
        assert_eq!(a, synth_dataset(4, 5, 6, 6, 3, 9));
        assert_ne!(a.images, synth_dataset(4, 5, 6, 6, 3, 10).images);
        assert_eq!(a.images.shape(), &[20, 6, 6, 3]);
        for k in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 5);
        }
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_per_class_is_empty() {
        let d = synth_dataset(3, 0, 4, 4, 1, 0);
        assert!(d.is_empty());
        assert_eq!(d.images.shape(), &[0, 4, 4, 1]);
    }

    #[test]
    fn streams_share_prototypes() {
        let g = SynthGenerator::new(2, 4, 4, 1, 3);
        let a = g.generate(10, 1);
        let b = g.generate(10, 2);
        assert_ne!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn two_classes_are_linearly_separable() {
        let mut g = SynthGenerator::new(2, 4, 4, 1, 21);
        g.noise = 0.05;
        g.jitter = 0;
        let data = g.generate(200, 0);
        let spec = ArchitectureSpec {
            input_shape: vec![4, 4, 1],
            classes: 2,
            layers: vec![LayerSpec::flatten("flatten"), LayerSpec::output("output", 2)],
        };
        let mut model = Model::build(&spec, 0).unwrap();
        let optimizer = OptimizerConfig {
            learning_rate: 1e-2,
            ..OptimizerConfig::default()
        };
        let opts = TrainOptions::new(LossKind::PlainCe, optimizer, StopRule::epochs(200), 0);
        train(&mut model, &data.samples(), None, &opts).unwrap();
        let (_, acc) = evaluate(&model, &data.samples(), LossKind::PlainCe).unwrap();
        assert!(acc >= 99.0, "accuracy {acc}");
    }
}
