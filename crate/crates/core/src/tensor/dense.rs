use super::Tensor;
use crate::error::{Error, Result};

/// Gradients of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weights: Tensor,
    pub biases: Vec<f64>,
}

fn dims(weights: &Tensor) -> Result<(usize, usize)> {
    match weights.shape() {
        [s, p] => Ok((*s, *p)),
        other => Err(Error::ShapeMismatch {
            expected: vec![0, 0],
            actual: other.to_vec(),
        }),
    }
}

/// `out[i] = sum_p weights[i][p] * input[p] + biases[i]` for a weight
/// matrix of shape (neurons, inputs).
pub fn dense_forward(input: &[f64], weights: &Tensor, biases: &[f64]) -> Result<Vec<f64>> {
    let (s, p) = dims(weights)?;
    if input.len() != p || biases.len() != s {
        return Err(Error::ShapeMismatch {
            expected: vec![s, p],
            actual: vec![biases.len(), input.len()],
        });
    }
    Ok(weights
        .data()
        .chunks_exact(p)
        .zip(biases)
        .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (w, x)| acc + w * x))
        .collect())
}

pub fn dense_backward(grad_out: &[f64], cached_input: &[f64], weights: &Tensor) -> Result<DenseGrads> {
    let (s, p) = dims(weights)?;
    if grad_out.len() != s || cached_input.len() != p {
        return Err(Error::ShapeMismatch {
            expected: vec![s, p],
            actual: vec![grad_out.len(), cached_input.len()],
        });
    }
    let mut gx = vec![0.0; p];
    let mut gw = vec![0.0; s * p];
    for ((row, grow), &d) in weights
        .data()
        .chunks_exact(p)
        .zip(gw.chunks_exact_mut(p))
        .zip(grad_out)
    {
        for (((gxv, &w), gwv), &x) in gx.iter_mut().zip(row).zip(grow).zip(cached_input) {
            *gxv += w * d;
            *gwv = d * x;
        }
    }
    Ok(DenseGrads {
        input: gx,
        weights: Tensor::new(vec![s, p], gw)?,
        biases: grad_out.to_vec(),
    })
}
