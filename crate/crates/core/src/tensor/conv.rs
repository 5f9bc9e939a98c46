use super::{Padding, Tensor};
use crate::error::{Error, Result};

/// Weights of a convolutional layer laid out as
/// (height, width, in_channels, out_channels): one kernel per input channel
/// per filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStack<'a> {
    weights: &'a Tensor,
}

impl<'a> KernelStack<'a> {
    pub fn new(weights: &'a Tensor) -> Result<Self> {
        let (height, width) = match weights.shape() {
            [h, w, _, _] => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    expected: vec![0, 0, 0, 0],
                    actual: other.to_vec(),
                })
            }
        };
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::EvenKernel { height, width });
        }
        Ok(KernelStack { weights })
    }

    pub fn height(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn half_height(&self) -> usize {
        (self.height() - 1) / 2
    }

    pub fn half_width(&self) -> usize {
        (self.width() - 1) / 2
    }

    pub fn weights(&self) -> &'a Tensor {
        self.weights
    }
}

/// Output extent of a stride-1 convolution along one axis, or `None` if the
/// kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input),
        Padding::Valid => (input + 1).checked_sub(kernel).filter(|&e| e > 0),
    }
}

/// Gradients of a convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub biases: Vec<f64>,
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    cin: usize,
    out_h: usize,
    out_w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(input: &Tensor, kernels: &KernelStack<'_>, padding: Padding) -> Result<Self> {
        let (in_h, in_w, cin) = input.hwc()?;
        if cin != kernels.in_channels() {
            return Err(Error::ChannelMismatch {
                input: cin,
                kernels: kernels.in_channels(),
            });
        }
        let (kh, kw) = (kernels.height(), kernels.width());
        let (out_h, out_w) = match (
            conv_output_extent(in_h, kh, padding),
            conv_output_extent(in_w, kw, padding),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: vec![kh, kw, cin],
                    actual: input.shape().to_vec(),
                })
            }
        };
        let (pad_top, pad_left) = match padding {
            Padding::Same => (kernels.half_height(), kernels.half_width()),
            Padding::Valid => (0, 0),
        };
        Ok(Geometry {
            in_h,
            in_w,
            cin,
            out_h,
            out_w,
            cout: kernels.out_channels(),
            kh,
            kw,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate read by output `o` through kernel tap `k`, if inside
    /// the (unpadded) input.
    #[inline]
    fn source(o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        (o + k).checked_sub(pad).filter(|&i| i < extent)
    }
}

/// Stride-1 multi-channel cross-correlation plus bias: output channel `c` is
/// the sum over input channels of each channel filtered by its kernel, plus
/// `biases[c]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &KernelStack<'_>,
    biases: &[f64],
    padding: Padding,
) -> Result<Tensor> {
    let g = Geometry::new(input, kernels, padding)?;
    if biases.len() != g.cout {
        return Err(Error::ShapeMismatch {
            expected: vec![g.cout],
            actual: vec![biases.len()],
        });
    }
    let x = input.data();
    let w = kernels.weights().data();
    let mut out = vec![0.0; g.out_h * g.out_w * g.cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut out[(oy * g.out_w + ox) * g.cout..][..g.cout];
            row.copy_from_slice(biases);
            for ky in 0..g.kh {
                let Some(iy) = Geometry::source(oy, ky, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = Geometry::source(ox, kx, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let pixel = &x[(iy * g.in_w + ix) * g.cin..][..g.cin];
                    let tap = &w[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &v) in pixel.iter().enumerate() {
                        let wrow = &tap[ci * g.cout..][..g.cout];
                        for (o, &wv) in row.iter_mut().zip(wrow) {
                            *o += v * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, g.cout], out)
}

/// Gradients of [`conv2d_forward`] with respect to its input, weights and
/// biases, given the upstream gradient and the input of the forward call.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    kernels: &KernelStack<'_>,
    padding: Padding,
) -> Result<ConvGrads> {
    let g = Geometry::new(cached_input, kernels, padding)?;
    grad_out.expect_shape(&[g.out_h, g.out_w, g.cout])?;
    let x = cached_input.data();
    let w = kernels.weights().data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let grow = &go[(oy * g.out_w + ox) * g.cout..][..g.cout];
            for (b, &d) in gb.iter_mut().zip(grow) {
                *b += d;
            }
            for ky in 0..g.kh {
                let Some(iy) = Geometry::source(oy, ky, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = Geometry::source(ox, kx, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let base = (iy * g.in_w + ix) * g.cin;
                    let tap = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let v = x[base + ci];
                        let off = tap + ci * g.cout;
                        let wrow = &w[off..][..g.cout];
                        let gwrow = &mut gw[off..][..g.cout];
                        let mut acc = 0.0;
                        for ((gwv, &wv), &d) in gwrow.iter_mut().zip(wrow).zip(grow) {
                            *gwv += v * d;
                            acc += wv * d;
                        }
                        gx[base + ci] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(cached_input.shape().to_vec(), gx)?,
        weights: Tensor::new(kernels.weights().shape().to_vec(), gw)?,
        biases: gb,
    })
}
