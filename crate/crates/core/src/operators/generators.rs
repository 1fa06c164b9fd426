//! Seeded generators for masks, blur kernels and k-space sampling patterns.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fraction of the image removed by [`rect_mask`], drawn uniformly per mask.
#[derive(Clone, Copy, Debug)]
pub struct MaskCoverage {
    pub min: f64,
    pub max: f64,
}

impl Default for MaskCoverage {
    fn default() -> Self {
        MaskCoverage { min: 0.10, max: 0.25 }
    }
}

/// Binary `[1, H, W]` mask with random axis-aligned holes (zeros).
///
/// Rectangles with sides between 10% and 35% of the image are dropped until
/// the removed area reaches a target fraction drawn from `coverage`; holes
/// that would push the removed area past `coverage.max` are skipped.
pub fn rect_mask<S: Scalar>(h: usize, w: usize, coverage: MaskCoverage, seed: u64) -> Result<Tensor<S>> {
    if h < 4 || w < 4 {
        return Err(Error::invalid(format!("mask too small: {h}x{w}")));
    }
    if !(0.0..1.0).contains(&coverage.min) || coverage.max < coverage.min || coverage.max >= 1.0 {
        return Err(Error::invalid(format!("invalid mask coverage {coverage:?}")));
    }
    let mut rng = Rng::new(seed);
    let target = coverage.min + (coverage.max - coverage.min) * rng.uniform();
    let mut keep = vec![true; h * w];
    let mut removed = 0usize;
    let side = |rng: &mut Rng, n: usize| {
        let lo = (n / 10).max(1);
        let hi = (n * 35 / 100).max(lo + 1);
        rng.range(lo, hi)
    };
    let limit = (coverage.max * (h * w) as f64) as usize;
    let mut rejected = 0;
    while (removed as f64) < target * (h * w) as f64 && rejected < 256 {
        let rh = side(&mut rng, h);
        let rw = side(&mut rng, w);
        let top = rng.range(0, h - rh + 1);
        let left = rng.range(0, w - rw + 1);
        let fresh = (top..top + rh)
            .flat_map(|i| (left..left + rw).map(move |j| i * w + j))
            .filter(|&p| keep[p])
            .count();
        if removed + fresh > limit {
            rejected += 1;
            continue;
        }
        for i in top..top + rh {
            keep[i * w + left..i * w + left + rw].iter_mut().for_each(|k| *k = false);
        }
        removed += fresh;
    }
    Tensor::new(&[1, h, w], keep.iter().map(|&k| if k { S::one() } else { S::zero() }).collect())
}

/// Normalized `size×size` linear-motion kernel: a centred segment of the
/// given length (pixels) and angle (degrees), splatted bilinearly.
pub fn motion_kernel<S: Scalar>(size: usize, length: f64, angle_deg: f64) -> Result<Tensor<S>> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::invalid(format!("motion kernel size must be odd, got {size}")));
    }
    if !(length >= 0.0) || length > size as f64 {
        return Err(Error::invalid(format!("motion length {length} outside [0, {size}]")));
    }
    let c = (size / 2) as f64;
    let (dy, dx) = angle_deg.to_radians().sin_cos();
    let samples = (length * 8.0).ceil().max(1.0) as usize;
    let mut k = vec![0.0f64; size * size];
    for s in 0..=samples {
        let u = if samples == 0 { 0.0 } else { s as f64 / samples as f64 - 0.5 };
        let x = c + u * length * dx;
        let y = c - u * length * dy;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (yy, xx) = (y0 + oy, x0 + ox);
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < size && (xx as usize) < size {
                    k[yy as usize * size + xx as usize] += wy * wx;
                }
            }
        }
    }
    let total: f64 = k.iter().sum();
    Tensor::new(&[size, size], k.iter().map(|v| S::lit(v / total)).collect())
}

/// `[H, W]` pattern sampling every `accel`-th column plus `center` central
/// columns (phase encoding along the width axis).
pub fn equispaced_columns<S: Scalar>(h: usize, w: usize, accel: usize, center: usize) -> Result<Tensor<S>> {
    if accel == 0 || center > w {
        return Err(Error::invalid(format!("invalid equispaced pattern accel={accel} center={center}")));
    }
    let lo = (w - center) / 2;
    let cols: Vec<bool> = (0..w).map(|j| j % accel == 0 || (j >= lo && j < lo + center)).collect();
    Ok(Tensor::from_fn(&[h, w], |i| if cols[i % w] { S::one() } else { S::zero() }))
}

/// `[H, W]` pattern keeping each location with probability `keep`.
pub fn random_pattern<S: Scalar>(h: usize, w: usize, keep: f64, seed: u64) -> Result<Tensor<S>> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::invalid(format!("keep probability {keep} outside [0, 1]")));
    }
    let mut rng = Rng::new(seed);
    Ok(Tensor::from_fn(&[h, w], |_| if rng.uniform() < keep { S::one() } else { S::zero() }))
}
