//! Self-diffusion solver: anneal a scheduled noise level while one untrained
//! denoiser is fitted to the measurements at every step.
//!
//! Starting from `x_{T-1} = ε_0` the loop runs `t = T-1, …, 0`: it forms
//! `x_t + σ_t ε_t`, runs `K` Adam steps on
//! `‖A D(x_t + σ_t ε_t) - y‖² + tv·TV(D) + fl1·‖F D‖₁` and sets the next
//! estimate to the trained network's output on the same noisy input.
//!
//! Noise streams: `ε_0` comes from stream 0 of the run seed and `ε_t` from
//! stream `t + 1`, so every draw is independent of the execution order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::denoiser::UNet;
use crate::diagnostics::spectrum_magnitudes;
use crate::error::{Error, Result};
use crate::operators::LinearMap;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// Smoothing of `|·|` inside the TV and frequency-L1 penalties.
pub const PENALTY_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Fresh `ε_t` every step, held fixed over its `K` iterations.
    Resample,
    /// One `ε` reused at every step, still scaled by `σ_t`.
    Fixed,
    /// No noise term.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdiConfig {
    pub steps: usize,
    pub iterations: usize,
    pub eta: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reverse_schedule: bool,
    pub noise_mode: NoiseMode,
    pub tv_weight: f64,
    pub freq_l1_weight: f64,
    pub seed: u64,
    pub normalize_measurements: bool,
    /// Keep an estimate every this many steps (the final step is always
    /// kept); 0 disables snapshots.
    pub snapshot_every: usize,
    /// Record the orthonormal-FFT magnitudes of every estimate.
    pub record_spectrum: bool,
    /// Keep the loss of every inner iteration.
    pub record_inner_losses: bool,
}

impl Default for SdiConfig {
    fn default() -> Self {
        SdiConfig {
            steps: 40,
            iterations: 150,
            eta: 1e-3,
            beta_start: 1e-4,
            beta_end: 1e-2,
            reverse_schedule: false,
            noise_mode: NoiseMode::Resample,
            tv_weight: 0.0,
            freq_l1_weight: 0.0,
            seed: 0,
            normalize_measurements: false,
            snapshot_every: 0,
            record_spectrum: false,
            record_inner_losses: false,
        }
    }
}

impl SdiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.iterations == 0 {
            return Err(Error::invalid(format!(
                "steps and iterations must be at least 1 (got T={}, K={})",
                self.steps, self.iterations
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.eta)));
        }
        if !(self.tv_weight >= 0.0) || !(self.freq_l1_weight >= 0.0) {
            return Err(Error::invalid("penalty weights must be non-negative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.steps, self.beta_start, self.beta_end, self.reverse_schedule)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], eta: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            g.ensure_finite("adam gradient")?;
        }
        self.step += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (c1, c2) = (1.0 - self.beta1.powi(self.step as i32), 1.0 - self.beta2.powi(self.step as i32));
        let lr = S::lit(eta / c1);
        let inv_c2 = S::lit(1.0 / c2);
        let eps = S::lit(self.eps);
        let one = S::one();
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                pd[i] = pd[i] - lr * md[i] / ((vd[i] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Isotropic TV: `Σ sqrt(|∇x|² + ε²)` with forward differences over the
/// spatial axes of `[C, L]` or `[C, H, W]`, joint across channels.
pub fn tv_penalty<S: Scalar>(g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let grad = match shape.len() {
        2 => g.diff(x, 1)?,
        3 => {
            let dy = g.diff(x, 1)?;
            let dx = g.diff(x, 2)?;
            g.concat(&[dy, dx])?
        }
        _ => return Err(Error::invalid(format!("tv: expected [C, L] or [C, H, W], got {shape:?}"))),
    };
    let mag = g.magnitude(grad, PENALTY_EPS)?;
    g.sum(mag)
}

/// `Σ |F x|_ε` over the orthonormal spectrum. Real inputs `[C, ..]` use the
/// real transform over the spatial axes; planar complex inputs the complex one.
pub fn freq_l1_penalty<S: Scalar>(g: &mut Graph<'_, S>, x: Var, complex: bool) -> Result<Var> {
    let ndim = g.shape(x).len() - 1;
    let spec = if complex { g.fft(x, ndim, false)? } else { g.rfft(x, ndim)? };
    let mag = g.magnitude(spec, PENALTY_EPS)?;
    g.sum(mag)
}

/// Tensor-level TV value.
pub fn tv_value<S: Scalar>(x: &Tensor<S>) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone())?;
    let tv = tv_penalty(&mut g, v)?;
    Ok(g.value(tv).item().f64())
}

/// Loss weights shared by the solver and DIP.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Objective {
    pub tv: f64,
    pub freq_l1: f64,
}

pub(crate) struct FitOutcome<S> {
    pub loss: f64,
    pub grads: Vec<Tensor<S>>,
}

/// One loss/gradient evaluation of `‖A D(x) - y‖² + penalties`.
pub(crate) fn fit_eval<S: Scalar>(
    op: &dyn LinearMap<S>,
    y: &Tensor<S>,
    net: &UNet<S>,
    x: &Tensor<S>,
    obj: Objective,
) -> Result<FitOutcome<S>> {
    let mut g = Graph::new();
    let p = net.register(&mut g)?;
    let xv = g.constant(x.clone())?;
    let d = net.forward(&mut g, &p, xv)?;
    let ad = g.linear(d, op)?;
    let yv = g.constant(y.clone())?;
    let r = g.sub(ad, yv)?;
    let mut loss = g.norm_sq(r)?;
    if obj.tv > 0.0 {
        let tv = tv_penalty(&mut g, d)?;
        let tv = g.scale(tv, obj.tv)?;
        loss = g.add(loss, tv)?;
    }
    if obj.freq_l1 > 0.0 {
        let fl = freq_l1_penalty(&mut g, d, op.complex_domain())?;
        let fl = g.scale(fl, obj.freq_l1)?;
        loss = g.add(loss, fl)?;
    }
    let value = g.value(loss).item().f64();
    let mut grads = g.backward(loss)?;
    let grads = p
        .iter()
        .zip(net.params())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok(FitOutcome { loss: value, grads })
}

/// Run `iterations` Adam steps on a fixed input. Returns the per-iteration
/// losses (evaluated before each update). Failures become [`Error::Diverged`].
pub(crate) fn fit<S: Scalar>(
    op: &dyn LinearMap<S>,
    y: &Tensor<S>,
    net: &mut UNet<S>,
    adam: &mut AdamState<S>,
    x: &Tensor<S>,
    obj: Objective,
    iterations: usize,
    eta: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let diverged = |k: usize| move |e: Error| match e {
        Error::NonFinite { .. } => Error::Diverged { step, iteration: k },
        other => other,
    };
    let mut losses = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let out = fit_eval(op, y, net, x, obj).map_err(diverged(k))?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged { step, iteration: k });
        }
        adam.step(net.params_mut(), &out.grads, eta).map_err(diverged(k))?;
        losses.push(out.loss);
    }
    Ok(losses)
}

pub(crate) fn check_shapes<S: Scalar>(op: &dyn LinearMap<S>, y: &Tensor<S>, net: &UNet<S>) -> Result<()> {
    y.ensure_shape("measurements", op.range_shape())?;
    let cfg = net.config();
    if cfg.input_shape() != op.domain_shape() || cfg.output_shape() != op.domain_shape() {
        return Err(Error::shape("denoiser vs operator domain", &cfg.input_shape(), op.domain_shape()));
    }
    Ok(())
}

/// Scale `y` so that `‖A^H (s y)‖ = ‖D(x_init)‖`; returns `(s y, s)`.
pub fn normalize_measurements<S: Scalar>(
    op: &dyn LinearMap<S>,
    y: &Tensor<S>,
    net: &UNet<S>,
    x_init: &Tensor<S>,
) -> Result<(Tensor<S>, f64)> {
    let back = op.adjoint(y)?.norm().f64();
    if back == 0.0 {
        return Err(Error::invalid("A^H y is zero; measurements carry no signal"));
    }
    let out = net.denoise(x_init)?.norm().f64();
    let s = out / back;
    Ok((y.scale(S::lit(s)), s))
}

#[derive(Clone, Debug)]
pub struct StepRecord<S> {
    pub t: usize,
    pub sigma: f64,
    /// Loss at the last inner iteration (scaled units).
    pub loss: f64,
    /// Relative change `‖x_t - x_{t-1}‖² / ‖x_t‖²` between clean estimates.
    pub relative_change: f64,
    /// `‖A x_{t-1} - y‖ / ‖y‖` of the new estimate.
    pub residual: f64,
    /// `‖x_{t-1} - x_true‖²` when ground truth is supplied (unscaled).
    pub truth_error: Option<f64>,
    pub inner_losses: Vec<f64>,
    pub snapshot: Option<Tensor<S>>,
    pub spectrum: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunTrace<S> {
    /// One record per step in execution order (`t = T-1` first).
    pub records: Vec<StepRecord<S>>,
    /// Initial estimate `ε_0` (unscaled).
    pub initial: Tensor<S>,
    pub scale: f64,
    pub wall_time_secs: f64,
}

impl<S: Scalar> RunTrace<S> {
    /// Clean estimates `[x_{T-1}, x_{T-2}, …, x_{-1}]`, available when every
    /// step kept a snapshot.
    pub fn estimates(&self) -> Option<Vec<&Tensor<S>>> {
        let mut out = vec![&self.initial];
        for r in &self.records {
            out.push(r.snapshot.as_ref()?);
        }
        Some(out)
    }
}

/// Solve `A x = y` by self-diffusion. `net` is trained in place.
/// `x_true` only feeds the trace and is never used by the optimization.
pub fn sdi_solve<S: Scalar>(
    op: &dyn LinearMap<S>,
    y: &Tensor<S>,
    net: &mut UNet<S>,
    cfg: &SdiConfig,
    x_true: Option<&Tensor<S>>,
) -> Result<(Tensor<S>, RunTrace<S>)> {
    cfg.validate()?;
    check_shapes(op, y, net)?;
    if let Some(xt) = x_true {
        xt.ensure_shape("ground truth", op.domain_shape())?;
    }
    let started = Instant::now();
    let schedule = cfg.schedule()?;
    let shape = op.domain_shape().to_vec();
    let mut cur = Tensor::<S>::randn(&shape, &mut Rng::stream(cfg.seed, 0));
    let (y, scale) = if cfg.normalize_measurements {
        normalize_measurements(op, y, net, &cur)?
    } else {
        (y.clone(), 1.0)
    };
    let inv_scale = S::lit(1.0 / scale);
    let initial = cur.scale(inv_scale);
    let y_norm = y.norm().f64();
    let fixed_eps = (cfg.noise_mode == NoiseMode::Fixed)
        .then(|| Tensor::<S>::randn(&shape, &mut Rng::stream(cfg.seed, cfg.steps as u64)));
    let obj = Objective {
        tv: cfg.tv_weight,
        freq_l1: cfg.freq_l1_weight,
    };
    let mut adam = AdamState::new(net.params());
    let mut records = Vec::with_capacity(cfg.steps);

    for t in (0..cfg.steps).rev() {
        let sigma = schedule.sigma[t];
        let x_t = match cfg.noise_mode {
            NoiseMode::None => cur.clone(),
            NoiseMode::Resample => {
                let eps = Tensor::<S>::randn(&shape, &mut Rng::stream(cfg.seed, t as u64 + 1));
                let mut x = cur.clone();
                x.axpy(S::lit(sigma), &eps)?;
                x
            }
            NoiseMode::Fixed => {
                let mut x = cur.clone();
                x.axpy(S::lit(sigma), fixed_eps.as_ref().expect("drawn for fixed mode"))?;
                x
            }
        };
        let losses = fit(op, &y, net, &mut adam, &x_t, obj, cfg.iterations, cfg.eta, t)?;
        let next = net.denoise(&x_t).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged {
                step: t,
                iteration: cfg.iterations,
            },
            other => other,
        })?;

        let cur_norm = cur.norm_sq().f64();
        let change = next.sub(&cur)?.norm_sq().f64();
        let relative_change = if cur_norm > 0.0 { change / cur_norm } else { f64::INFINITY };
        let residual = op.apply(&next)?.sub(&y)?.norm().f64() / y_norm.max(f64::MIN_POSITIVE);
        let unscaled = next.scale(inv_scale);
        let truth_error = match x_true {
            Some(xt) => Some(unscaled.sub(xt)?.norm_sq().f64()),
            None => None,
        };
        let executed = cfg.steps - 1 - t;
        let keep = cfg.snapshot_every > 0 && (executed % cfg.snapshot_every == 0 || t == 0);
        let spectrum = if cfg.record_spectrum {
            Some(spectrum_magnitudes(&unscaled, op.complex_domain())?)
        } else {
            None
        };
        records.push(StepRecord {
            t,
            sigma,
            loss: *losses.last().expect("iterations >= 1"),
            relative_change,
            residual,
            truth_error,
            inner_losses: if cfg.record_inner_losses { losses } else { Vec::new() },
            snapshot: keep.then(|| unscaled.clone()),
            spectrum,
        });
        cur = next;
    }

    let estimate = cur.scale(inv_scale);
    let trace = RunTrace {
        records,
        initial,
        scale,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((estimate, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::operators::Operator;

    #[test]
    fn adam_first_step_has_magnitude_eta() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::<f64>::from_f64(&[3], &[3.0, -0.01, 100.0]).unwrap()];
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, &g, 1e-3).unwrap();
        let moved: Vec<f64> = p[0].data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, gi) in moved.iter().zip(g[0].data()) {
            assert!((d.abs() - 1e-3).abs() < 1e-8, "{d}");
            assert_eq!(d.signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_zero_grad_is_noop_and_rejects_nan() {
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap()];
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p, before);
        let bad = Tensor::<f64>::from_f64(&[2], &[f64::NAN, 0.0]).unwrap();
        assert!(adam.step(&mut p, &[bad], 0.1).is_err());
    }

    #[test]
    fn tv_of_ramp_and_constant() {
        let ramp = Tensor::<f64>::from_f64(&[1, 3], &[0.0, 1.0, 2.0]).unwrap();
        assert!((tv_value(&ramp).unwrap() - 2.0).abs() < 1e-7);
        let flat = Tensor::<f64>::full(&[1, 4, 4], 0.7);
        assert!(tv_value(&flat).unwrap() <= 16.0 * PENALTY_EPS * 1.0001);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = SdiConfig {
            iterations: 0,
            ..Default::default()
        };
        let op = Operator::<f64>::identity(&[1, 16]);
        let mut net = UNet::new(DenoiserConfig {
            spatial: vec![16],
            depth: 2,
            base_channels: 4,
            ..Default::default()
        })
        .unwrap();
        let y = Tensor::zeros(&[1, 16]);
        assert!(sdi_solve(&op, &y, &mut net, &cfg, None).is_err());
    }

    #[test]
    fn normalization_matches_norms() {
        let op = Operator::<f64>::identity(&[1, 16]);
        let net = UNet::new(DenoiserConfig {
            spatial: vec![16],
            depth: 2,
            base_channels: 4,
            ..Default::default()
        })
        .unwrap();
        let x0 = Tensor::randn(&[1, 16], &mut Rng::new(2));
        let y = Tensor::randn(&[1, 16], &mut Rng::new(3));
        let (sy, s) = normalize_measurements(&op, &y, &net, &x0).unwrap();
        let target = net.denoise(&x0).unwrap().norm();
        assert!((op.adjoint(&sy).unwrap().norm() - target).abs() < 1e-10 * target);
        let (_, s2) = normalize_measurements(&op, &y.scale(2.0), &net, &x0).unwrap();
        assert!((s2 - s / 2.0).abs() < 1e-12 * s);
        assert!(normalize_measurements(&op, &Tensor::zeros(&[1, 16]), &net, &x0).is_err());
    }
}
