use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which objective a training run minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Categorical cross-entropy of softmax(logits) against the true labels.
    #[default]
    PlainCe,
    /// Teacher MSE on pre-softmax logits plus cross-entropy on the labels.
    Cram,
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-sum_j l(j) * ln q(j)` for a target distribution `l` (one-hot for labels)
/// and a probability vector `q`.
pub fn cross_entropy(l: &[f64], q: &[f64]) -> Result<f64> {
    if l.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![l.len()],
            actual: vec![q.len()],
        });
    }
    let mut h = 0.0;
    for (j, (&lj, &qj)) in l.iter().zip(q).enumerate() {
        if lj == 0.0 {
            continue;
        }
        if qj <= 0.0 || !qj.is_finite() {
            return Err(Error::DivergentLoss(format!(
                "probability {qj} for target class {j}"
            )));
        }
        h -= lj * qj.ln();
    }
    Ok(h)
}

/// Mean squared difference of teacher and student pre-softmax logits.
pub fn teacher_mse(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "teacher and student class counts differ");
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn predicted_class(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Per-sample operands of the combined loss.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    /// Student pre-softmax logits.
    pub q: &'a [f64],
    /// Teacher pre-softmax logits.
    pub p: Option<&'a [f64]>,
    /// One-hot true label.
    pub l: &'a [f64],
}

/// A loss value, its two components and its gradient with respect to the
/// student logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub mse: f64,
    pub cross_entropy: f64,
    pub grad: Vec<f64>,
}

fn check_inputs(inputs: &LossInputs<'_>) -> Result<()> {
    let k = inputs.q.len();
    let p_ok = inputs.p.is_none_or(|p| p.len() == k);
    if inputs.l.len() != k || !p_ok {
        return Err(Error::ShapeMismatch {
            expected: vec![k],
            actual: vec![inputs.l.len(), inputs.p.map_or(k, <[f64]>::len)],
        });
    }
    Ok(())
}

/// Cross-entropy of softmax(q) against `l`; gradient `softmax(q) - l`.
pub fn plain_ce(inputs: &LossInputs<'_>) -> Result<LossValue> {
    check_inputs(inputs)?;
    let sigma = softmax(inputs.q);
    let h = cross_entropy(inputs.l, &sigma)?;
    let grad = sigma.iter().zip(inputs.l).map(|(s, l)| s - l).collect();
    Ok(LossValue {
        value: h,
        mse: 0.0,
        cross_entropy: h,
        grad,
    })
}

/// `teacher_mse(p, q) + cross_entropy(l, softmax(q))`, unweighted, with its
/// gradient `(2/K)(q - p) + softmax(q) - l`.
pub fn cram_loss(inputs: &LossInputs<'_>) -> Result<LossValue> {
    check_inputs(inputs)?;
    let p = inputs
        .p
        .ok_or_else(|| Error::Config("combined loss needs teacher logits".into()))?;
    let k = inputs.q.len() as f64;
    let sigma = softmax(inputs.q);
    let h = cross_entropy(inputs.l, &sigma)?;
    let e = teacher_mse(p, inputs.q);
    let grad = inputs
        .q
        .iter()
        .zip(p)
        .zip(sigma.iter().zip(inputs.l))
        .map(|((q, p), (s, l))| 2.0 / k * (q - p) + (s - l))
        .collect();
    Ok(LossValue {
        value: e + h,
        mse: e,
        cross_entropy: h,
        grad,
    })
}

pub fn sample_loss(kind: LossKind, inputs: &LossInputs<'_>) -> Result<LossValue> {
    match kind {
        LossKind::PlainCe => plain_ce(inputs),
        LossKind::Cram => cram_loss(inputs),
    }
}

/// Batch mean of the combined loss over rows of (N, K) logits.
pub fn cram_loss_batch(q: &[Vec<f64>], p: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for ((q, p), &label) in q.iter().zip(p).zip(labels) {
        let l = one_hot(label, q.len());
        total += cram_loss(&LossInputs {
            q,
            p: Some(p),
            l: &l,
        })?
        .value;
    }
    Ok(total / q.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_difference, max_rel_error};
    use crate::Tensor;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let s = softmax(&[2f64.ln(), 0.0]);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = softmax(&[1000.0, 0.0]);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let h = cross_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
        let e1 = (-1f64).exp();
        let h = cross_entropy(&[1.0, 0.0, 0.0], &[e1, (1.0 - e1) / 2.0, (1.0 - e1) / 2.0]).unwrap();
        assert!((h - 1.0).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], &[1.0, 0.0]),
            Err(Error::DivergentLoss(_))
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(teacher_mse(&[0.3, -1.0], &[0.3, -1.0]), 0.0);
        assert_eq!(teacher_mse(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
        assert_eq!(teacher_mse(&[2.0, 0.0, 0.0, 0.0], &[0.0; 4]), 1.0);
    }

    #[test]
    fn combined_loss_is_the_sum_of_its_parts() {
        // E = 0.5 with K = 2; H = ln 2 at q = [0, 0].
        let v = cram_loss(&LossInputs {
            q: &[0.0, 0.0],
            p: Some(&[1.0, 1.0]),
            l: &[1.0, 0.0],
        })
        .unwrap();
        assert_eq!(v.mse, 1.0);
        let v = cram_loss(&LossInputs {
            q: &[0.0, 0.0],
            p: Some(&[1.0, 0.0]),
            l: &[1.0, 0.0],
        })
        .unwrap();
        assert_eq!(v.mse, 0.5);
        assert!((v.value - 1.193147).abs() < 1e-6);
        assert_eq!(v.value, v.mse + v.cross_entropy);
    }

    #[test]
    fn joint_minimum_is_zero() {
        // softmax underflows to an exact one-hot for a 1000-logit gap.
        let q = [1000.0, 0.0, 0.0];
        let v = cram_loss(&LossInputs {
            q: &q,
            p: Some(&q),
            l: &[1.0, 0.0, 0.0],
        })
        .unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let q = Tensor::vector(vec![0.3, -1.2, 0.8, 0.1]);
        let p = [1.0, -0.5, 0.2, 0.0];
        let l = one_hot(2, 4);
        let v = cram_loss(&LossInputs {
            q: q.data(),
            p: Some(&p),
            l: &l,
        })
        .unwrap();
        let num = central_difference(&q, |q| {
            cram_loss(&LossInputs {
                q: q.data(),
                p: Some(&p),
                l: &l,
            })
            .unwrap()
            .value
        });
        assert!(max_rel_error(&v.grad, &num) < 1e-4);
    }

    #[test]
    fn equal_teacher_leaves_only_the_label_gradient() {
        let q = [0.4, -0.3, 1.1];
        let l = one_hot(0, 3);
        let a = cram_loss(&LossInputs {
            q: &q,
            p: Some(&q),
            l: &l,
        })
        .unwrap();
        let b = plain_ce(&LossInputs { q: &q, p: None, l: &l }).unwrap();
        assert_eq!(a.grad, b.grad);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(predicted_class(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(predicted_class(&[0.0, 0.0]), 0);
    }

    #[test]
    fn missing_teacher_is_an_error() {
        let r = cram_loss(&LossInputs {
            q: &[0.0],
            p: None,
            l: &[1.0],
        });
        assert!(r.is_err());
    }
}
