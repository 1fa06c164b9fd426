//! Noise schedule `β_t`, `ᾱ_t`, `σ_t`.
//!
//! `β_t = β_end + t/(T-1) · (β_start - β_end)`, so `β_end` sits at `t = 0`
//! and `β_start` at `t = T - 1`. With `reverse` the endpoints swap roles.
//! A single-step schedule uses `β_start`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reversed: bool,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(steps, beta_start, beta_end, false)
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64, reverse: bool) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} = {b} outside (0, 1)")));
            }
        }
        let (at_last, at_zero) = if reverse { (beta_end, beta_start) } else { (beta_start, beta_end) };
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|t| at_zero + t as f64 / (steps - 1) as f64 * (at_last - at_zero))
                .collect()
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(NoiseSchedule {
            steps,
            beta_start,
            beta_end,
            reversed: reverse,
            beta,
            alpha_bar,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// `(t, β_t, ᾱ_t, σ_t)` rows in ascending `t`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64, f64)> + '_ {
        (0..self.steps).map(move |t| (t, self.beta[t], self.alpha_bar[t], self.sigma[t]))
    }
}
