use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Interpolation kernels used to build initial feature descriptions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    Bicubic,
    Nearest,
    /// Bilinear.
    Linear,
    /// Box averaging over the source footprint.
    Area,
    Lanczos4,
}

impl ResampleMethod {
    pub const ALL: [ResampleMethod; 5] = [
        ResampleMethod::Bicubic,
        ResampleMethod::Nearest,
        ResampleMethod::Linear,
        ResampleMethod::Area,
        ResampleMethod::Lanczos4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResampleMethod::Bicubic => "bicubic",
            ResampleMethod::Nearest => "nearest",
            ResampleMethod::Linear => "linear",
            ResampleMethod::Area => "area",
            ResampleMethod::Lanczos4 => "lanczos4",
        }
    }
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResampleMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown resample method `{s}`")))
    }
}

/// Per-output-sample taps `(source index, weight)` along one axis. Weights of
/// each output sample sum to one.
#[derive(Clone, Debug)]
struct AxisTaps {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    fn new(in_len: usize, out_len: usize, factor: f64, method: ResampleMethod) -> Self {
        let last = in_len as isize - 1;
        let clamp = |i: isize| i.clamp(0, last) as usize;
        let taps = (0..out_len)
            .map(|o| {
                let mut t: Vec<(usize, f64)> = match method {
                    ResampleMethod::Nearest => {
                        let src = ((o as f64) / factor).floor() as isize;
                        vec![(clamp(src), 1.0)]
                    }
                    ResampleMethod::Area => area_taps(o, factor, in_len),
                    _ => {
                        let center = (o as f64 + 0.5) / factor - 0.5;
                        let base = center.floor() as isize;
                        let (lo, hi) = match method {
                            ResampleMethod::Linear => (0, 1),
                            ResampleMethod::Bicubic => (-1, 2),
                            _ => (-3, 4),
                        };
                        (lo..=hi)
                            .map(|k| {
                                let idx = base + k;
                                let d = center - idx as f64;
                                (clamp(idx), kernel(method, d))
                            })
                            .collect()
                    }
                };
                let sum: f64 = t.iter().map(|&(_, w)| w).sum();
                for tap in &mut t {
                    tap.1 /= sum;
                }
                t
            })
            .collect();
        AxisTaps { in_len, taps }
    }

    fn out_len(&self) -> usize {
        self.taps.len()
    }
}

fn kernel(method: ResampleMethod, d: f64) -> f64 {
    let x = d.abs();
    match method {
        ResampleMethod::Linear => (1.0 - x).max(0.0),
        ResampleMethod::Bicubic => {
            // Keys cubic with a = -0.75
            const A: f64 = -0.75;
            if x <= 1.0 {
                ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
            } else if x < 2.0 {
                ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
            } else {
                0.0
            }
        }
        ResampleMethod::Lanczos4 => {
            if x < 1e-12 {
                1.0
            } else if x >= 4.0 {
                0.0
            } else {
                let px = PI * x;
                4.0 * px.sin() * (px / 4.0).sin() / (px * px)
            }
        }
        ResampleMethod::Nearest | ResampleMethod::Area => unreachable!("not a continuous kernel"),
    }
}

fn area_taps(o: usize, factor: f64, in_len: usize) -> Vec<(usize, f64)> {
    let start = o as f64 / factor;
    let end = (o + 1) as f64 / factor;
    let first = start.floor() as usize;
    let last = (end.ceil() as usize).max(first + 1);
    (first..last)
        .filter_map(|i| {
            let overlap = (end.min((i + 1) as f64) - start.max(i as f64)).max(0.0);
            (overlap > 0.0).then(|| (i.min(in_len - 1), overlap))
        })
        .collect()
}

/// A separable linear resampling operator with a fixed input and output size.
///
/// Besides the forward map it exposes the adjoint, which back-propagates
/// gradients through an upsampler.
#[derive(Clone, Debug)]
pub struct Resampler {
    rows: AxisTaps,
    cols: AxisTaps,
}

impl Resampler {
    pub fn new(
        in_dims: (usize, usize),
        factor: f64,
        method: ResampleMethod,
    ) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "resample factor must be positive, got {factor}"
            )));
        }
        let (h, w) = in_dims;
        let out_h = (h as f64 * factor).round() as usize;
        let out_w = (w as f64 * factor).round() as usize;
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "factor {factor} maps {h}x{w} to an empty image"
            )));
        }
        Ok(Resampler {
            rows: AxisTaps::new(h, out_h, factor, method),
            cols: AxisTaps::new(w, out_w, factor, method),
        })
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.dims() != self.in_dims() {
            return Err(Error::DimensionMismatch {
                left: img.dims(),
                right: self.in_dims(),
            });
        }
        let (h, _) = self.in_dims();
        let (out_h, out_w) = self.out_dims();
        let mut horizontal = vec![0.0; h * out_w];
        for y in 0..h {
            let src = img.row(y);
            let dst = &mut horizontal[y * out_w..(y + 1) * out_w];
            for (d, taps) in dst.iter_mut().zip(&self.cols.taps) {
                *d = taps.iter().map(|&(i, wt)| wt * src[i]).sum();
            }
        }
        let mut out = vec![0.0; out_h * out_w];
        for (oy, taps) in self.rows.taps.iter().enumerate() {
            let dst = &mut out[oy * out_w..(oy + 1) * out_w];
            for &(iy, wt) in taps {
                let src = &horizontal[iy * out_w..(iy + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
        Image::new(out_h, out_w, out)
    }

    /// Applies the transpose of [`Resampler::apply`]: maps an output-sized
    /// image back to the input size.
    pub fn adjoint(&self, grad: &Image) -> Result<Image> {
        if grad.dims() != self.out_dims() {
            return Err(Error::DimensionMismatch {
                left: grad.dims(),
                right: self.out_dims(),
            });
        }
        let (h, w) = self.in_dims();
        let (_, out_w) = self.out_dims();
        let mut vertical = vec![0.0; h * out_w];
        for (oy, taps) in self.rows.taps.iter().enumerate() {
            let src = grad.row(oy);
            for &(iy, wt) in taps {
                let dst = &mut vertical[iy * out_w..(iy + 1) * out_w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            let src = &vertical[y * out_w..(y + 1) * out_w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (s, taps) in src.iter().zip(&self.cols.taps) {
                for &(ix, wt) in taps {
                    dst[ix] += wt * s;
                }
            }
        }
        Image::new(h, w, out)
    }
}

/// Resamples by `factor`; output dimensions are the rounded scaled input
/// dimensions. Every kernel has unit DC gain.
pub fn resample(img: &Image, factor: f64, method: ResampleMethod) -> Result<Image> {
    Resampler::new(img.dims(), factor, method)?.apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_half_scale_every_method() {
        let img = Image::filled(10, 14, 0.5);
        for m in ResampleMethod::ALL {
            let out = resample(&img, 0.5, m).unwrap();
            assert_eq!(out.dims(), (5, 7), "{m}");
            assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-12), "{m}");
        }
    }

    #[test]
    fn half_scale_of_160_is_80() {
        let img = Image::zeros(160, 160);
        assert_eq!(resample(&img, 0.5, ResampleMethod::Bicubic).unwrap().dims(), (80, 80));
    }

    #[test]
    fn nearest_doubling_duplicates_columns() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resample(&img, 2.0, ResampleMethod::Nearest).unwrap();
        assert_eq!(out.dims(), (4, 4));
        for y in 0..4 {
            assert_eq!(out.row(y), &[0.0, 0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn area_half_scale_averages_blocks() {
        let img = Image::new(2, 2, vec![0.0, 0.2, 0.4, 0.6]).unwrap();
        let out = resample(&img, 0.5, ResampleMethod::Area).unwrap();
        assert!((out.get(0, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bilinear_doubling_interior_weights() {
        // align-corners-false: output 1 samples source position 0.25
        let img = Image::new(1, 2, vec![0.0, 1.0]).unwrap();
        let out = resample(&img, 2.0, ResampleMethod::Linear).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for (o, e) in out.row(0).iter().zip(expected) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_factor() {
        let img = Image::zeros(4, 4);
        assert!(resample(&img, 0.0, ResampleMethod::Linear).is_err());
        assert!(resample(&img, -1.0, ResampleMethod::Linear).is_err());
        assert!(resample(&img, 0.01, ResampleMethod::Linear).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in ResampleMethod::ALL {
            assert_eq!(m.name().parse::<ResampleMethod>().unwrap(), m);
        }
        assert!("cubic-ish".parse::<ResampleMethod>().is_err());
    }

    proptest! {
        #[test]
        fn constants_preserved(c in 0.0f64..1.0, h in 1usize..24, w in 1usize..24,
                               factor in prop::sample::select(vec![0.5, 2.0, 0.75, 1.5, 3.0]),
                               m in prop::sample::select(ResampleMethod::ALL.to_vec())) {
            let img = Image::filled(h, w, c);
            if let Ok(out) = resample(&img, factor, m) {
                for &v in out.data() {
                    prop_assert!((v - c).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn adjoint_identity(seed in 0u64..1000, m in prop::sample::select(ResampleMethod::ALL.to_vec())) {
            // <A x, y> == <x, A^T y>
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let op = Resampler::new((6, 9), 2.0, m).unwrap();
            let x = Image::from_fn(6, 9, |_, _| rng.random());
            let (oh, ow) = op.out_dims();
            let y = Image::from_fn(oh, ow, |_, _| rng.random());
            let ax = op.apply(&x).unwrap();
            let aty = op.adjoint(&y).unwrap();
            let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
