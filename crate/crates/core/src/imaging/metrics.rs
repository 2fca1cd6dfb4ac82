use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// SSIM stabilizing constants for intensities in `[0, 1]`.
pub const SSIM_C1: f64 = 0.0001;
pub const SSIM_C2: f64 = 0.0009;

/// PSNR in dB with peak 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Gaussian SSIM window. Statistics are computed only where the window lies
/// fully inside the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow {
            size: 11,
            sigma: 1.5,
        }
    }
}

impl SsimWindow {
    /// Normalized 1-D taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    fn check(&self, a: &Image, b: &Image) -> Result<()> {
        a.ensure_same_dims(b)?;
        if self.size == 0 || !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("bad SSIM window {self:?}")));
        }
        let (h, w) = a.dims();
        if h < self.size || w < self.size {
            return Err(Error::TooSmall {
                height: h,
                width: w,
                window: self.size,
            });
        }
        Ok(())
    }
}

/// Valid-region separable correlation.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horizontal = vec![0.0; h * ow];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            horizontal[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (t, &tap) in taps.iter().enumerate() {
            let src = &horizontal[(y + t) * ow..(y + t + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tap * s;
            }
        }
    }
    out
}

/// Transpose of [`filter_valid`].
fn filter_valid_adjoint(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut vertical = vec![0.0; h * ow];
    for y in 0..oh {
        let src = &data[y * ow..(y + 1) * ow];
        for (t, &tap) in taps.iter().enumerate() {
            let dst = &mut vertical[(y + t) * ow..(y + t + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += tap * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let src = &vertical[y * ow..(y + 1) * ow];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &s) in src.iter().enumerate() {
            for (t, &tap) in taps.iter().enumerate() {
                dst[x + t] += tap * s;
            }
        }
    }
    out
}

struct LocalStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn local_stats(a: &Image, b: &Image, taps: &[f64]) -> LocalStats {
    let (h, w) = a.dims();
    let sq = |img: &Image| img.data().iter().map(|v| v * v).collect::<Vec<_>>();
    let prod: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a.data(), h, w, taps);
    let mu_b = filter_valid(b.data(), h, w, taps);
    let e_aa = filter_valid(&sq(a), h, w, taps);
    let e_bb = filter_valid(&sq(b), h, w, taps);
    let e_ab = filter_valid(&prod, h, w, taps);
    let n = mu_a.len();
    let mut var_a = Vec::with_capacity(n);
    let mut var_b = Vec::with_capacity(n);
    let mut cov = Vec::with_capacity(n);
    for i in 0..n {
        var_a.push(e_aa[i] - mu_a[i] * mu_a[i]);
        var_b.push(e_bb[i] - mu_b[i] * mu_b[i]);
        cov.push(e_ab[i] - mu_a[i] * mu_b[i]);
    }
    LocalStats {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

/// Mean SSIM with the default 11×11, σ = 1.5 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, SsimWindow::default())
}

pub fn ssim_with(a: &Image, b: &Image, window: SsimWindow) -> Result<f64> {
    window.check(a, b)?;
    let s = local_stats(a, b, &window.taps());
    let n = s.mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let num = (2.0 * s.mu_a[i] * s.mu_b[i] + SSIM_C1) * (2.0 * s.cov[i] + SSIM_C2);
            let den = (s.mu_a[i] * s.mu_a[i] + s.mu_b[i] * s.mu_b[i] + SSIM_C1)
                * (s.var_a[i] + s.var_b[i] + SSIM_C2);
            num / den
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image, window: SsimWindow) -> Result<(f64, Image)> {
    window.check(a, b)?;
    let taps = window.taps();
    let (h, w) = a.dims();
    let s = local_stats(a, b, &taps);
    let n = s.mu_a.len();
    let inv_n = 1.0 / n as f64;

    // Per-window partials of the index with respect to mu_a, var_a and cov,
    // already scaled by 1/n.
    let mut d_mu = vec![0.0; n];
    let mut d_var = vec![0.0; n];
    let mut d_var_mu = vec![0.0; n];
    let mut d_cov = vec![0.0; n];
    let mut d_cov_mu = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * s.cov[i] + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
        let f = a1 * a2 / (b1 * b2);
        total += f;
        let df_dmu = 2.0 * mb * a2 / (b1 * b2) - f * 2.0 * ma / b1;
        let df_dvar = -f / b2;
        let df_dcov = 2.0 * a1 / (b1 * b2);
        d_mu[i] = df_dmu * inv_n;
        d_var[i] = df_dvar * inv_n;
        d_var_mu[i] = df_dvar * ma * inv_n;
        d_cov[i] = df_dcov * inv_n;
        d_cov_mu[i] = df_dcov * mb * inv_n;
    }

    // d var_a / d a_q = 2 w (a_q - mu_a), d cov / d a_q = w (b_q - mu_b)
    let t_mu = filter_valid_adjoint(&d_mu, h, w, &taps);
    let t_var = filter_valid_adjoint(&d_var, h, w, &taps);
    let t_var_mu = filter_valid_adjoint(&d_var_mu, h, w, &taps);
    let t_cov = filter_valid_adjoint(&d_cov, h, w, &taps);
    let t_cov_mu = filter_valid_adjoint(&d_cov_mu, h, w, &taps);
    let grad: Vec<f64> = (0..h * w)
        .map(|q| {
            let (aq, bq) = (a.data()[q], b.data()[q]);
            t_mu[q] + 2.0 * aq * t_var[q] - 2.0 * t_var_mu[q] + bq * t_cov[q] - t_cov_mu[q]
        })
        .collect();
    Ok((total * inv_n, Image::new(h, w, grad)?))
}
