use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::LossKind;
use super::train::{batch_gradients, evaluate, Samples};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, Model};
use crate::tensor::maxpool2d_argmax;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared in absolute terms.
const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Largest model the checker accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ReLU or max-pool switched branch inside
    /// the probe interval, where the loss is not differentiable.
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Signature of every piecewise-linear branch taken on a batch: ReLU signs
/// and max-pool winners.
fn branch_signature(model: &Model, samples: &Samples<'_>) -> Result<u64> {
    let mut h = DefaultHasher::new();
    for i in 0..samples.len() {
        let trace = model.forward_trace(samples.inputs.sample(i))?;
        for (l, layer) in model.spec().layers.iter().enumerate() {
            let x = &trace[l];
            match layer.kind {
                LayerKind::Relu => {
                    for v in x.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                LayerKind::Maxpool => maxpool2d_argmax(x)?.hash(&mut h),
                _ => {}
            }
        }
    }
    Ok(h.finish())
}

/// Compares analytic batch-mean gradients against central differences on
/// `coordinates` parameter positions drawn with `seed` (all positions if the
/// model is smaller).
pub fn gradient_check(
    model: &Model,
    samples: &Samples<'_>,
    loss: LossKind,
    coordinates: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let total = model.param_count();
    if total > GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradient check limited to {GRADCHECK_MAX_PARAMS} parameters, model has {total}"
        )));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    let trainable = vec![true; model.spec().layers.len()];
    let (grads, _, _) = batch_gradients(model, samples, &all, loss, &trainable)?;
    let analytic: Vec<f64> = grads.slices().flatten().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, coordinates.min(total)).into_vec();
    let base_signature = branch_signature(model, samples)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for flat in picks {
        let slot = locate(&mut probe, flat);
        let orig = *slot;
        *slot = orig + GRADCHECK_STEP;
        let sig_plus = branch_signature(&probe, samples)?;
        let (plus, _) = evaluate(&probe, samples, loss)?;
        *locate(&mut probe, flat) = orig - GRADCHECK_STEP;
        let sig_minus = branch_signature(&probe, samples)?;
        let (minus, _) = evaluate(&probe, samples, loss)?;
        *locate(&mut probe, flat) = orig;
        if sig_plus != base_signature || sig_minus != base_signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[flat], numeric));
        report.checked += 1;
    }
    Ok(report)
}

fn locate(model: &mut Model, mut flat: usize) -> &mut f64 {
    for s in model.params_mut().slices_mut() {
        if flat < s.len() {
            return &mut s[flat];
        }
        flat -= s.len();
    }
    panic!("parameter index out of range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ArchitectureSpec, LayerSpec};
    use crate::testutil::random_tensor;
    use crate::{Padding, Tensor};

    /// The baseline's layer pattern at 8×8 input.
    fn micro_baseline() -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: vec![8, 8, 3],
            classes: 4,
            layers: vec![
                LayerSpec::conv("conv1", 4, 3, Padding::Same),
                LayerSpec::relu("relu1"),
                LayerSpec::conv("conv2", 4, 3, Padding::Valid),
                LayerSpec::relu("relu2"),
                LayerSpec::maxpool("pool1"),
                LayerSpec::conv("conv3", 6, 3, Padding::Same),
                LayerSpec::relu("relu3"),
                LayerSpec::conv("conv4", 6, 1, Padding::Valid),
                LayerSpec::relu("relu4"),
                LayerSpec::maxpool("pool2"),
                LayerSpec::flatten("flatten"),
                LayerSpec::dense("fc1", 8),
                LayerSpec::relu("relu5"),
                LayerSpec::output("output", 4),
            ],
        }
    }

    fn batch(seed: u64, n: usize) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[n, 8, 8, 3]);
        (x, (0..n).map(|i| i % 4).collect())
    }

    #[test]
    fn micro_baseline_gradients() {
        let m = Model::build(&micro_baseline(), 1).unwrap();
        let (x, y) = batch(2, 3);
        let teacher = Model::build(&micro_baseline(), 9).unwrap().forward(&x).unwrap();
        for (loss, s) in [
            (LossKind::PlainCe, Samples::new(&x, &y)),
            (LossKind::Cram, Samples::new(&x, &y).with_teacher(&teacher)),
        ] {
            let r = gradient_check(&m, &s, loss, 600, 3).unwrap();
            assert!(r.checked >= 500, "{r:?}");
            assert!(r.max_rel_error < 1e-4, "{loss:?}: {r:?}");
        }
    }

    #[test]
    fn zero_loss_point() {
        let mut m = Model::build(&micro_baseline(), 1).unwrap();
        m.params_mut().layer_mut(13).unwrap().biases.data_mut()[0] = 1000.0;
        let (x, _) = batch(3, 2);
        let y = vec![0, 0];
        let s = Samples::new(&x, &y);
        assert_eq!(evaluate(&m, &s, LossKind::PlainCe).unwrap().0, 0.0);
        let all = vec![true; m.spec().layers.len()];
        let (g, _, _) = batch_gradients(&m, &s, &[0, 1], LossKind::PlainCe, &all).unwrap();
        assert!(g.slices().flatten().all(|v| v.abs() < 1e-300));
        let r = gradient_check(&m, &s, LossKind::PlainCe, 100, 0).unwrap();
        assert!(r.max_rel_error < 1e-4);
    }

    #[test]
    fn self_teacher_matches_plain_gradient() {
        let m = Model::build(&micro_baseline(), 4).unwrap();
        let (x, y) = batch(5, 4);
        let own = m.forward(&x).unwrap();
        let all = vec![true; m.spec().layers.len()];
        let idx: Vec<usize> = (0..4).collect();
        let (a, _, _) =
            batch_gradients(&m, &Samples::new(&x, &y), &idx, LossKind::PlainCe, &all).unwrap();
        let s = Samples::new(&x, &y).with_teacher(&own);
        let (b, _, _) = batch_gradients(&m, &s, &idx, LossKind::Cram, &all).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refuses_large_models() {
        let spec = ArchitectureSpec {
            input_shape: vec![300],
            classes: 200,
            layers: vec![LayerSpec::output("o", 200)],
        };
        let m = Model::build(&spec, 0).unwrap();
        let x = Tensor::zeros(&[1, 300]);
        assert!(gradient_check(&m, &Samples::new(&x, &[0]), LossKind::PlainCe, 10, 0).is_err());
    }
}
