//! im2col/col2im kernels behind the convolution primitives.
//!
//! Column matrices are laid out `[channels·kh·kw, batch·out_h·out_w]`,
//! row-major, so a convolution is one GEMM against the kernel matrix.

use crate::autodiff::Real;
use crate::error::{dim_err, Result};

/// Spatial geometry of one convolution: image side in, patch grid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Patches {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Patches {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.batch * self.grid_h * self.grid_w
    }

    #[inline]
    fn source(&self, g: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (g * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Output extent of a strided convolution, or an error when it would be empty.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(dim_err!("stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(dim_err!(
            "kernel {kernel} exceeds padded input {padded} (input {input}, pad {pad})"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(dim_err!("stride must be positive"));
    }
    if out_pad >= stride {
        return Err(dim_err!("output padding {out_pad} must be smaller than stride {stride}"));
    }
    let full = (input - 1) * stride + kernel + out_pad;
    if full <= 2 * pad {
        return Err(dim_err!("transposed convolution output would be empty"));
    }
    Ok(full - 2 * pad)
}

pub(crate) fn im2col<T: Real>(image: &[T], p: &Patches) -> Vec<T> {
    let cols = p.cols();
    let grid = p.grid_h * p.grid_w;
    let plane = p.height * p.width;
    let mut out = vec![T::zero(); p.rows() * cols];
    for c in 0..p.channels {
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for b in 0..p.batch {
                    let src = &image[(b * p.channels + c) * plane..][..plane];
                    for gy in 0..p.grid_h {
                        let Some(y) = p.source(gy, ki, p.height) else { continue };
                        let base = b * grid + gy * p.grid_w;
                        for gx in 0..p.grid_w {
                            if let Some(x) = p.source(gx, kj, p.width) {
                                dst[base + gx] = src[y * p.width + x];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub(crate) fn col2im<T: Real>(columns: &[T], p: &Patches) -> Vec<T> {
    let cols = p.cols();
    let grid = p.grid_h * p.grid_w;
    let plane = p.height * p.width;
    let mut image = vec![T::zero(); p.batch * p.channels * plane];
    for c in 0..p.channels {
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let src = &columns[row * cols..(row + 1) * cols];
                for b in 0..p.batch {
                    let dst = &mut image[(b * p.channels + c) * plane..][..plane];
                    for gy in 0..p.grid_h {
                        let Some(y) = p.source(gy, ki, p.height) else { continue };
                        let base = b * grid + gy * p.grid_w;
                        for gx in 0..p.grid_w {
                            if let Some(x) = p.source(gx, kj, p.width) {
                                dst[y * p.width + x] += src[base + gx];
                            }
                        }
                    }
                }
            }
        }
    }
    image
}

/// `[batch, channels, inner]` → `[channels, batch·inner]`.
pub(crate) fn batch_major_to_channel_major<T: Real>(
    data: &[T],
    batch: usize,
    channels: usize,
    inner: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &data[(b * channels + c) * inner..][..inner];
            out[c * batch * inner + b * inner..][..inner].copy_from_slice(src);
        }
    }
    out
}

/// `[channels, batch·inner]` → `[batch, channels, inner]`.
pub(crate) fn channel_major_to_batch_major<T: Real>(
    data: &[T],
    batch: usize,
    channels: usize,
    inner: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &data[c * batch * inner + b * inner..][..inner];
            out[(b * channels + c) * inner..][..inner].copy_from_slice(src);
        }
    }
    out
}
