//! PSNR, SSIM and NRMSE.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// PSNR reported in tables when the error is exactly zero.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `max |x_ref|`, the default PSNR peak.
pub fn default_peak<S: Scalar>(x_ref: &Tensor<S>) -> f64 {
    x_ref.max_abs().f64()
}

/// `10 log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn psnr<S: Scalar>(x_hat: &Tensor<S>, x_ref: &Tensor<S>, peak: f64) -> Result<f64> {
    same_shape("psnr", x_hat, x_ref)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = x_hat
        .data()
        .iter()
        .zip(x_ref.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / x_ref.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR clamped to [`PSNR_CAP`] for tables.
pub fn psnr_capped(value: f64) -> f64 {
    value.min(PSNR_CAP)
}

/// `‖x_hat - x_ref‖ / ‖x_ref‖`.
pub fn nrmse<S: Scalar>(x_hat: &Tensor<S>, x_ref: &Tensor<S>) -> Result<f64> {
    same_shape("nrmse", x_hat, x_ref)?;
    let denom = x_ref.norm().f64();
    if denom == 0.0 {
        return Err(Error::invalid("nrmse reference is zero"));
    }
    Ok(x_hat.sub(x_ref)?.norm().f64() / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SsimReport {
    pub ssim: f64,
    /// Mean luminance term `(2 μx μy + C1) / (μx² + μy² + C1)`.
    pub luminance: f64,
    /// Mean contrast-structure term `(2 σxy + C2) / (σx² + σy² + C2)`.
    pub contrast_structure: f64,
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Mean local SSIM over every fully contained 11×11 Gaussian window
/// (`σ = 1.5`). Inputs are `[H, W]` or `[C, H, W]`; channels are averaged.
pub fn ssim<S: Scalar>(x_hat: &Tensor<S>, x_ref: &Tensor<S>, peak: f64) -> Result<SsimReport> {
    same_shape("ssim", x_hat, x_ref)?;
    let (c, h, w) = match x_ref.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::invalid(format!("ssim needs a 2D image, got shape {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("ssim peak must be positive, got {peak}")));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let xa = x_hat.to_f64_vec();
    let xb = x_ref.to_f64_vec();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let (mut s_sum, mut l_sum, mut cs_sum) = (0.0, 0.0, 0.0);
    for ch in 0..c {
        let a = &xa[ch * h * w..(ch + 1) * h * w];
        let b = &xb[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (u, wu) in win.iter().enumerate() {
                    for (v, wv) in win.iter().enumerate() {
                        let wt = wu * wv;
                        let p = (i + u) * w + j + v;
                        ma += wt * a[p];
                        mb += wt * b[p];
                        aa += wt * a[p] * a[p];
                        bb += wt * b[p] * b[p];
                        ab += wt * a[p] * b[p];
                    }
                }
                let va = aa - ma * ma;
                let vb = bb - mb * mb;
                let cov = ab - ma * mb;
                let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                s_sum += l * cs;
                l_sum += l;
                cs_sum += cs;
            }
        }
    }
    let n = (c * oh * ow) as f64;
    Ok(SsimReport {
        ssim: s_sum / n,
        luminance: l_sum / n,
        contrast_structure: cs_sum / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub nrmse: f64,
}

/// PSNR (peak `max |x_ref|`), NRMSE, and SSIM when the inputs are images
/// large enough for the window.
pub fn evaluate<S: Scalar>(x_hat: &Tensor<S>, x_ref: &Tensor<S>) -> Result<MetricsReport> {
    let peak = default_peak(x_ref);
    let psnr = psnr(x_hat, x_ref, peak)?;
    let nrmse = nrmse(x_hat, x_ref)?;
    let ssim = ssim(x_hat, x_ref, peak).ok().map(|r| r.ssim);
    Ok(MetricsReport { psnr, ssim, nrmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::<f64>::full(&[4, 4], 0.25);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(f64::INFINITY), PSNR_CAP);
        let b = a.map(|v| v + 0.5);
        assert!((psnr(&b, &a, 1.0).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(psnr(&a, &Tensor::zeros(&[16]), 1.0).is_err());
    }

    #[test]
    fn nrmse_cases() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f64>::randn(&[10], &mut rng);
        assert_eq!(nrmse(&x, &x).unwrap(), 0.0);
        assert!((nrmse(&Tensor::zeros(&[10]), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((nrmse(&x.scale(2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(nrmse(&x, &Tensor::zeros(&[10])).is_err());
    }

    #[test]
    fn ssim_identity_inverse_and_shift() {
        let mut rng = Rng::new(5);
        let img = Tensor::<f64>::from_fn(&[16, 16], |_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 });
        assert!((ssim(&img, &img, 1.0).unwrap().ssim - 1.0).abs() < 1e-9);
        let inv = img.map(|v| 1.0 - v);
        let r = ssim(&inv, &img, 1.0).unwrap();
        assert!(r.ssim < 0.2 && r.contrast_structure < -0.5, "{r:?}");
        let shifted = img.map(|v| v + 0.1);
        let r = ssim(&shifted, &img, 1.0).unwrap();
        assert!(r.luminance < 1.0 && (r.contrast_structure - 1.0).abs() < 1e-6, "{r:?}");
        assert!(ssim(&Tensor::<f64>::zeros(&[8, 8]), &Tensor::zeros(&[8, 8]), 1.0).is_err());
    }
}
