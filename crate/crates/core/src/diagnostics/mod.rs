//! Quality metrics and empirical checks of the solver's dynamics.

mod metrics;

pub use metrics::{default_peak, evaluate, nrmse, psnr, psnr_capped, ssim, MetricsReport, SsimReport, PSNR_CAP};

use serde::Serialize;

use crate::autodiff::fft;
use crate::error::{Error, Result};
use crate::operators::LinearMap;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default band for spectral convergence, as a fraction of `|c_k|`.
pub const CONVERGENCE_BAND: f64 = 0.2;

/// Forward-difference step for Jacobian-vector products.
pub const JVP_STEP: f64 = 1e-5;

/// `‖x_t - x_prev‖² / ‖x_t‖²`.
pub fn relative_change<S: Scalar>(x_t: &Tensor<S>, x_prev: &Tensor<S>) -> Result<f64> {
    let denom = x_t.norm_sq().f64();
    if denom == 0.0 {
        return Err(Error::invalid("relative change of a zero estimate"));
    }
    Ok(x_t.sub(x_prev)?.norm_sq().f64() / denom)
}

/// Orthonormal spectrum magnitudes, flattened. Real `[C, ..]` tensors use the
/// real transform over the spatial axes; planar complex `[2, ..]` the complex one.
pub fn spectrum_magnitudes<S: Scalar>(x: &Tensor<S>, complex: bool) -> Result<Vec<f64>> {
    if x.rank() < 2 {
        return Err(Error::invalid(format!("spectrum needs [C, ..], got {:?}", x.shape())));
    }
    let ndim = x.rank() - 1;
    let spec = if complex { fft::fft(x, ndim, false)? } else { fft::rfft(x, ndim)? };
    let half = spec.len() / 2;
    let d = spec.data();
    Ok((0..half).map(|i| d[i].f64().hypot(d[half + i].f64())).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralTrace {
    /// Step index `t` for each row, in execution order (descending).
    pub steps: Vec<usize>,
    /// `|d_{t,k}|`, one row per step.
    pub magnitudes: Vec<Vec<f64>>,
    /// `|c_k|` of the ground truth.
    pub truth: Vec<f64>,
}

impl SpectralTrace {
    pub fn bins(&self) -> usize {
        self.truth.len()
    }

    /// First step `t` (in descending order) from which the bin stays within
    /// `band·|c_k|` of the truth for every later step. `None` if the bin
    /// never settles or carries no energy.
    pub fn convergence_step(&self, bin: usize, band: f64) -> Option<usize> {
        let c = self.truth[bin];
        // Bins at round-off level carry no truth energy.
        let peak = self.truth.iter().cloned().fold(0.0, f64::max);
        if c <= 1e-12 * peak {
            return None;
        }
        let mut first = None;
        for (row, &t) in self.magnitudes.iter().zip(&self.steps).rev() {
            if (row[bin] - c).abs() <= band * c {
                first = Some(t);
            } else {
                break;
            }
        }
        first
    }
}

/// Spectra of per-step estimates against the truth. `estimates[i]` is the
/// estimate produced at step `steps[i]`.
pub fn spectral_trace<S: Scalar>(
    steps: &[usize],
    estimates: &[&Tensor<S>],
    x_true: &Tensor<S>,
    complex: bool,
) -> Result<SpectralTrace> {
    if estimates.is_empty() || estimates.len() != steps.len() {
        return Err(Error::invalid(format!(
            "spectral trace needs one estimate per step ({} steps, {} estimates)",
            steps.len(),
            estimates.len()
        )));
    }
    let truth = spectrum_magnitudes(x_true, complex)?;
    let magnitudes = estimates
        .iter()
        .map(|e| {
            e.ensure_shape("spectral trace", x_true.shape())?;
            spectrum_magnitudes(e, complex)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralTrace {
        steps: steps.to_vec(),
        magnitudes,
        truth,
    })
}

/// Cosine between each update `x_{t-1} - x_t` and the direction to the truth
/// `x_true - x_t`, over consecutive estimates. `None` where either vector has
/// norm below `1e-12`.
pub fn drift_alignment<S: Scalar>(estimates: &[&Tensor<S>], x_true: &Tensor<S>) -> Result<Vec<Option<f64>>> {
    estimates
        .windows(2)
        .map(|w| {
            let step = w[1].sub(w[0])?;
            let toward = x_true.sub(w[0])?;
            let (a, b) = (step.norm().f64(), toward.norm().f64());
            if a < 1e-12 || b < 1e-12 {
                return Ok(None);
            }
            Ok(Some(step.dot(&toward)?.f64() / (a * b)))
        })
        .collect()
}

/// Mean and standard error of a probe-based estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

fn mean_and_se(samples: &[f64]) -> Estimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Estimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
    }
}

/// A map `x ↦ D(x)` evaluated without gradients.
pub trait Denoise<S: Scalar> {
    fn eval(&self, x: &Tensor<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> Denoise<S> for crate::denoiser::UNet<S> {
    fn eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.denoise(x)
    }
}

impl<S: Scalar, F: Fn(&Tensor<S>) -> Result<Tensor<S>>> Denoise<S> for F {
    fn eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self(x)
    }
}

fn probe<S: Scalar>(shape: &[usize], seed: u64, i: usize) -> Tensor<S> {
    Tensor::randn(shape, &mut Rng::stream(seed, i as u64))
}

/// `‖A (D(x0 + hε) - D(x0)) / h‖²` for one probe.
fn jvp_sq<S: Scalar>(
    op: &dyn LinearMap<S>,
    d: &dyn Denoise<S>,
    x0: &Tensor<S>,
    base: &Tensor<S>,
    eps: &Tensor<S>,
) -> Result<f64> {
    let mut xp = x0.clone();
    xp.axpy(S::lit(JVP_STEP), eps)?;
    let jv = d.eval(&xp)?.sub(base)?.scale(S::lit(1.0 / JVP_STEP));
    Ok(op.apply(&jv)?.norm_sq().f64())
}

/// Hutchinson estimate of `‖A J_D(x0)‖_F²` from Gaussian probes, with
/// forward-difference Jacobian-vector products.
pub fn jacobian_frobenius<S: Scalar>(
    op: &dyn LinearMap<S>,
    d: &dyn Denoise<S>,
    x0: &Tensor<S>,
    n_probes: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_probes < 8 {
        return Err(Error::invalid(format!("jacobian estimate needs at least 8 probes, got {n_probes}")));
    }
    let base = d.eval(x0)?;
    let samples = (0..n_probes)
        .map(|i| jvp_sq(op, d, x0, &base, &probe(x0.shape(), seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_se(&samples))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TaylorCheckResult {
    pub sigma: f64,
    pub mc_expected_loss: f64,
    pub mc_std_error: f64,
    /// `‖A D(x0) - y‖²`.
    pub fidelity_term: f64,
    /// `σ² ‖A J_D(x0)‖_F²`.
    pub jacobian_term: f64,
    pub n_probes: usize,
}

impl TaylorCheckResult {
    pub fn predicted(&self) -> f64 {
        self.fidelity_term + self.jacobian_term
    }

    /// `|mc - predicted| / mc`.
    pub fn relative_gap(&self) -> f64 {
        (self.mc_expected_loss - self.predicted()).abs() / self.mc_expected_loss.abs().max(f64::MIN_POSITIVE)
    }

    /// Gap in units of the Monte-Carlo standard error.
    pub fn gap_in_std_errors(&self) -> f64 {
        (self.mc_expected_loss - self.predicted()).abs() / self.mc_std_error.max(f64::MIN_POSITIVE)
    }
}

/// Compare the Monte-Carlo mean of `L(ε) = ‖A D(x0 + σε) - y‖²` with the
/// second-order prediction `‖A D(x0) - y‖² + σ²‖A J_D‖_F²`. The Jacobian term
/// uses the same probes `ε` as the Monte-Carlo loss.
pub fn taylor_check<S: Scalar>(
    op: &dyn LinearMap<S>,
    d: &dyn Denoise<S>,
    y: &Tensor<S>,
    x0: &Tensor<S>,
    sigma: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TaylorCheckResult> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if n_mc < 2 {
        return Err(Error::invalid("taylor check needs at least 2 draws"));
    }
    let base = d.eval(x0)?;
    let fidelity = op.apply(&base)?.sub(y)?.norm_sq().f64();
    let mut losses = Vec::with_capacity(n_mc);
    let mut jac = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        let eps = probe::<S>(x0.shape(), seed, i);
        let mut xn = x0.clone();
        xn.axpy(S::lit(sigma), &eps)?;
        losses.push(op.apply(&d.eval(&xn)?)?.sub(y)?.norm_sq().f64());
        jac.push(jvp_sq(op, d, x0, &base, &eps)?);
    }
    let mc = mean_and_se(&losses);
    let j = mean_and_se(&jac);
    Ok(TaylorCheckResult {
        sigma,
        mc_expected_loss: mc.mean,
        mc_std_error: mc.std_error,
        fidelity_term: fidelity,
        jacobian_term: sigma * sigma * j.mean,
        n_probes: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Operator;

    #[test]
    fn relative_change_cases() {
        let a = Tensor::<f64>::from_f64(&[2], &[1.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2], &[0.0, 1.0]).unwrap();
        assert_eq!(relative_change(&a, &a).unwrap(), 0.0);
        assert_eq!(relative_change(&a, &b).unwrap(), 2.0);
        assert!(relative_change(&Tensor::zeros(&[2]), &a).is_err());
    }

    #[test]
    fn convergence_of_exact_estimates() {
        let x = Tensor::<f64>::from_fn(&[1, 16], |i| (i as f64 * 0.7).sin());
        let steps: Vec<usize> = (0..5).rev().collect();
        let est = vec![&x; 5];
        let tr = spectral_trace(&steps, &est, &x, false).unwrap();
        assert_eq!(tr.magnitudes.len(), 5);
        for k in 0..tr.bins() {
            if tr.truth[k] > 0.0 {
                assert_eq!(tr.convergence_step(k, CONVERGENCE_BAND), Some(4));
            }
        }
        assert!(spectral_trace::<f64>(&steps, &est[..3], &x, false).is_err());
    }

    #[test]
    fn drift_degenerate_and_exact() {
        let truth = Tensor::<f64>::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let start = Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap();
        let half = Tensor::<f64>::from_f64(&[2], &[0.5, 0.5]).unwrap();
        let d = drift_alignment(&[&start, &half, &truth, &truth], &truth).unwrap();
        assert!((d[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((d[1].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(d[2], None);
    }

    #[test]
    fn hutchinson_on_projection() {
        let mut mask = Tensor::<f64>::zeros(&[1, 32]);
        for i in 0..10 {
            mask.data_mut()[i * 3] = 1.0;
        }
        let op = Operator::inpaint_mask(mask).unwrap();
        let ident = |x: &Tensor<f64>| Ok(x.clone());
        let est = jacobian_frobenius(&op, &ident, &Tensor::zeros(&[1, 32]), 512, 3).unwrap();
        assert!((est.mean - 10.0).abs() < 3.0 * est.std_error + 1e-6, "{est:?}");
    }
}
