use super::Tensor;
use crate::error::{Error, Result};

/// Side of the square max-pooling window; the stride equals the window.
pub const POOL_WINDOW: usize = 2;

/// Pooled extent along one axis. Leftover rows/columns are dropped.
pub fn pool_output_extent(input: usize) -> Option<usize> {
    (input >= POOL_WINDOW).then(|| (input - POOL_WINDOW) / POOL_WINDOW + 1)
}

fn geometry(input: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (h, w, c) = input.hwc()?;
    match (pool_output_extent(h), pool_output_extent(w)) {
        (Some(oh), Some(ow)) => Ok((h, w, c, oh, ow)),
        _ => Err(Error::WindowTooLarge {
            height: h,
            width: w,
            window: POOL_WINDOW,
        }),
    }
}

/// Flat input index of the maximum of each output window. Ties go to the
/// first element in row-major order.
pub fn maxpool2d_argmax(input: &Tensor) -> Result<Vec<usize>> {
    argmax(input).map(|(idx, _)| idx)
}

fn argmax(input: &Tensor) -> Result<(Vec<usize>, [usize; 3])> {
    let (_, w, c, oh, ow) = geometry(input)?;
    let x = input.data();
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = ((oy * POOL_WINDOW) * w + ox * POOL_WINDOW) * c + ch;
                for dy in 0..POOL_WINDOW {
                    for dx in 0..POOL_WINDOW {
                        let i = ((oy * POOL_WINDOW + dy) * w + ox * POOL_WINDOW + dx) * c + ch;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((idx, [oh, ow, c]))
}

/// 2×2 / stride-2 max pooling.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    let (idx, shape) = argmax(input)?;
    let x = input.data();
    Tensor::new(shape.to_vec(), idx.iter().map(|&i| x[i]).collect())
}

/// Routes each upstream gradient to the position that won its window.
pub fn maxpool2d_backward(grad_out: &Tensor, cached_input: &Tensor) -> Result<Tensor> {
    let (idx, shape) = argmax(cached_input)?;
    grad_out.expect_shape(&shape)?;
    let mut gx = Tensor::zeros(cached_input.shape());
    let data = gx.data_mut();
    for (&i, &d) in idx.iter().zip(grad_out.data()) {
        data[i] += d;
    }
    Ok(gx)
}
