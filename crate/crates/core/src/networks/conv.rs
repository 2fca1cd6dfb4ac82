//! Strided convolution and transposed convolution via im2col + GEMM.

use super::tensor::{matmul, FeatureMap, Op, Scalar};

/// Maps a sampling grid onto a source plane: grid cell `(gy, gx)` with tap
/// `(ky, kx)` reads source pixel `(gy*stride + ky - pad_y, gx*stride + kx - pad_x)`;
/// reads outside the source are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad_y: usize,
    pub pad_x: usize,
    pub src_h: usize,
    pub src_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

impl Geometry {
    /// SAME-padded convolution over an `h × w` input.
    pub fn conv(h: usize, w: usize, kernel: usize, stride: usize) -> Self {
        let (grid_h, pad_y) = same_padding(h, kernel, stride);
        let (grid_w, pad_x) = same_padding(w, kernel, stride);
        Geometry {
            kernel,
            stride,
            pad_y,
            pad_x,
            src_h: h,
            src_w: w,
            grid_h,
            grid_w,
        }
    }

    /// Transposed convolution over an `h × w` input producing exactly
    /// `stride·h × stride·w`, the full output center-cropped.
    pub fn deconv(h: usize, w: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel >= stride, "kernel smaller than stride leaves holes");
        let crop = (kernel - stride) / 2;
        Geometry {
            kernel,
            stride,
            pad_y: crop,
            pad_x: crop,
            src_h: h * stride,
            src_w: w * stride,
            grid_h: h,
            grid_w: w,
        }
    }

    fn grid_len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Grid columns `[lo, hi)` whose source column for tap `kx` is in range.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        // gx*s + kx - pad >= 0  and  gx*s + kx - pad < src_w
        let lo = if kx >= self.pad_x {
            0
        } else {
            (self.pad_x - kx).div_ceil(s)
        };
        let limit = self.src_w + self.pad_x;
        let hi = if limit > kx {
            (limit - kx).div_ceil(s).min(self.grid_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Unfolds `channels` source planes into a `(channels·k²) × grid` matrix.
pub(crate) fn im2col<T: Scalar>(src: &[T], channels: usize, g: &Geometry, col: &mut Vec<T>) {
    let plane = g.src_h * g.src_w;
    let grid = g.grid_len();
    col.clear();
    col.resize(channels * g.taps() * grid, T::zero());
    for c in 0..channels {
        let src_plane = &src[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst_row = &mut col[row * grid..(row + 1) * grid];
                let (lo, hi) = g.valid_cols(kx);
                for gy in 0..g.grid_h {
                    let iy = (gy * g.stride + ky) as isize - g.pad_y as isize;
                    if iy < 0 || iy >= g.src_h as isize {
                        continue;
                    }
                    let src_row = &src_plane[iy as usize * g.src_w..(iy as usize + 1) * g.src_w];
                    let dst = &mut dst_row[gy * g.grid_w..(gy + 1) * g.grid_w];
                    if g.stride == 1 {
                        let start = lo + kx - g.pad_x;
                        dst[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (gx, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src_row[gx * g.stride + kx - g.pad_x];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto source planes.
pub(crate) fn col2im<T: Scalar>(col: &[T], channels: usize, g: &Geometry, dst: &mut [T]) {
    let plane = g.src_h * g.src_w;
    let grid = g.grid_len();
    dst[..channels * plane].iter_mut().for_each(|v| *v = T::zero());
    for c in 0..channels {
        let dst_plane = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src_row = &col[row * grid..(row + 1) * grid];
                let (lo, hi) = g.valid_cols(kx);
                for gy in 0..g.grid_h {
                    let iy = (gy * g.stride + ky) as isize - g.pad_y as isize;
                    if iy < 0 || iy >= g.src_h as isize {
                        continue;
                    }
                    let out_row = &mut dst_plane[iy as usize * g.src_w..(iy as usize + 1) * g.src_w];
                    let src = &src_row[gy * g.grid_w..(gy + 1) * g.grid_w];
                    if g.stride == 1 {
                        let start = lo + kx - g.pad_x;
                        for (o, &s) in out_row[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *o = *o + s;
                        }
                    } else {
                        for gx in lo..hi {
                            let o = &mut out_row[gx * g.stride + kx - g.pad_x];
                            *o = *o + src[gx];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. `weights` is `[out][in][k][k]`.
pub(crate) fn conv_forward<T: Scalar>(
    input: &FeatureMap<T>,
    weights: &[T],
    bias: &[T],
    out_channels: usize,
    kernel: usize,
    stride: usize,
    scratch: &mut Vec<T>,
) -> FeatureMap<T> {
    let g = Geometry::conv(input.height, input.width, kernel, stride);
    im2col(&input.data, input.channels, &g, scratch);
    let mut out = FeatureMap::zeros(out_channels, g.grid_h, g.grid_w);
    let grid = g.grid_len();
    for (o, &b) in bias.iter().enumerate() {
        out.data[o * grid..(o + 1) * grid].iter_mut().for_each(|v| *v = b);
    }
    let kdim = input.channels * kernel * kernel;
    matmul(out_channels, kdim, grid, weights, Op::N, scratch, Op::N, &mut out.data, true);
    out
}

/// Convolution backward. Accumulates parameter gradients when given and
/// returns the input gradient when `want_input`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &FeatureMap<T>,
    grad_out: &FeatureMap<T>,
    weights: &[T],
    kernel: usize,
    stride: usize,
    param_grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    scratch: &mut Vec<T>,
) -> Option<FeatureMap<T>> {
    let g = Geometry::conv(input.height, input.width, kernel, stride);
    let grid = g.grid_len();
    let kdim = input.channels * kernel * kernel;
    let out_channels = grad_out.channels;
    if let Some((gw, gb)) = param_grads {
        im2col(&input.data, input.channels, &g, scratch);
        matmul(out_channels, grid, kdim, &grad_out.data, Op::N, scratch, Op::T, gw, true);
        for (o, b) in gb.iter_mut().enumerate() {
            let s = grad_out.data[o * grid..(o + 1) * grid]
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            *b = *b + s;
        }
    }
    if !want_input {
        return None;
    }
    scratch.clear();
    scratch.resize(kdim * grid, T::zero());
    matmul(kdim, out_channels, grid, weights, Op::T, &grad_out.data, Op::N, scratch, false);
    let mut grad_in = FeatureMap::zeros(input.channels, input.height, input.width);
    col2im(scratch, input.channels, &g, &mut grad_in.data);
    Some(grad_in)
}

/// Transposed convolution forward. `weights` is `[in][out][k][k]`.
pub(crate) fn deconv_forward<T: Scalar>(
    input: &FeatureMap<T>,
    weights: &[T],
    bias: &[T],
    out_channels: usize,
    kernel: usize,
    stride: usize,
    scratch: &mut Vec<T>,
) -> FeatureMap<T> {
    let g = Geometry::deconv(input.height, input.width, kernel, stride);
    let kdim = out_channels * kernel * kernel;
    let grid = g.grid_len();
    scratch.clear();
    scratch.resize(kdim * grid, T::zero());
    matmul(kdim, input.channels, grid, weights, Op::T, &input.data, Op::N, scratch, false);
    let mut out = FeatureMap::zeros(out_channels, g.src_h, g.src_w);
    col2im(scratch, out_channels, &g, &mut out.data);
    let plane = out.plane_len();
    for (o, &b) in bias.iter().enumerate() {
        out.data[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *v + b);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv_backward<T: Scalar>(
    input: &FeatureMap<T>,
    grad_out: &FeatureMap<T>,
    weights: &[T],
    kernel: usize,
    stride: usize,
    param_grads: Option<(&mut [T], &mut [T])>,
    want_input: bool,
    scratch: &mut Vec<T>,
) -> Option<FeatureMap<T>> {
    let g = Geometry::deconv(input.height, input.width, kernel, stride);
    let out_channels = grad_out.channels;
    let kdim = out_channels * kernel * kernel;
    let grid = g.grid_len();
    im2col(&grad_out.data, out_channels, &g, scratch);
    if let Some((gw, gb)) = param_grads {
        matmul(input.channels, grid, kdim, &input.data, Op::N, scratch, Op::T, gw, true);
        let plane = grad_out.plane_len();
        for (o, b) in gb.iter_mut().enumerate() {
            let s = grad_out.data[o * plane..(o + 1) * plane]
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            *b = *b + s;
        }
    }
    if !want_input {
        return None;
    }
    let mut grad_in = FeatureMap::zeros(input.channels, input.height, input.width);
    matmul(input.channels, kdim, grid, weights, Op::N, scratch, Op::N, &mut grad_in.data, false);
    Some(grad_in)
}
