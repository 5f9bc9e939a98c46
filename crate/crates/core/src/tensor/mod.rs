//! Dense tensors and the layer kernels.
//!
//! Images use the height × width × channels layout; a batch prepends the
//! sample axis. All kernels work on a single sample and are pure functions,
//! so callers may evaluate disjoint samples on different threads.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, ConvGrads, KernelStack};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use pool::{maxpool2d, maxpool2d_argmax, maxpool2d_backward, pool_output_extent, POOL_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Border handling of a stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero-padded border; output keeps the input's spatial extent.
    #[default]
    Same,
    /// No padding; output shrinks by the kernel's half-width on each side.
    Valid,
}

/// Dense row-major `f64` array with at most four axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 4 || shape.iter().product::<usize>() != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// 1-D tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data viewed under a different shape of equal size.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    /// Number of samples along the leading (batch) axis.
    pub fn batch_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Shape of one sample of a batched tensor.
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1.min(self.shape.len())..]
    }

    /// Contiguous slice of sample `index` along the batch axis.
    pub fn sample(&self, index: usize) -> &[f64] {
        let stride: usize = self.sample_shape().iter().product();
        &self.data[index * stride..(index + 1) * stride]
    }

    /// Copy of sample `index` as its own tensor.
    pub fn sample_tensor(&self, index: usize) -> Tensor {
        Tensor {
            shape: self.sample_shape().to_vec(),
            data: self.sample(index).to_vec(),
        }
    }

    /// Stack equally shaped samples along a new leading axis.
    pub fn stack(sample_shape: &[usize], samples: &[&[f64]]) -> Result<Self> {
        let stride: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(stride * samples.len());
        for s in samples {
            if s.len() != stride {
                return Err(Error::DataLength {
                    shape: sample_shape.to_vec(),
                    len: s.len(),
                });
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        Tensor::new(shape, data)
    }

    /// Gather the listed samples of a batched tensor into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let stride: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(stride * indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Tensor { shape, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Extents of an (H, W, C) tensor.
    pub(crate) fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                actual: self.shape.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn sample_views() {
        let t = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.batch_len(), 3);
        assert_eq!(t.sample(1), &[3., 4.]);
        let g = t.gather(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[5., 6., 1., 2.]);
        let s = Tensor::stack(&[2], &[t.sample(0), t.sample(2)]).unwrap();
        assert_eq!(s.data(), &[1., 2., 5., 6.]);
    }
}
