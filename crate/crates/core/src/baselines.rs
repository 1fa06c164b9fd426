//! Reference solvers: Deep Image Prior and ADMM basis pursuit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::UNet;
use crate::engine::{check_shapes, fit, normalize_measurements, AdamState, Objective};
use crate::error::{Error, Result};
use crate::operators::LinearMap;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipConfig {
    pub iterations: usize,
    pub eta: f64,
    pub tv_weight: f64,
    pub freq_l1_weight: f64,
    /// Seed of the fixed input `z ~ N(0, I)` (stream 0, like the solver's `ε_0`).
    pub input_noise_seed: u64,
    pub normalize_measurements: bool,
}

impl Default for DipConfig {
    fn default() -> Self {
        DipConfig {
            iterations: 6000,
            eta: 1e-3,
            tv_weight: 0.0,
            freq_l1_weight: 0.0,
            input_noise_seed: 0,
            normalize_measurements: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DipTrace {
    pub losses: Vec<f64>,
    pub scale: f64,
    pub wall_time_secs: f64,
}

/// Fit `D_θ(z)` to the measurements for a fixed random `z`; returns `D_θ(z)`.
pub fn dip_solve<S: Scalar>(
    op: &dyn LinearMap<S>,
    y: &Tensor<S>,
    net: &mut UNet<S>,
    cfg: &DipConfig,
) -> Result<(Tensor<S>, DipTrace)> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("DIP needs at least one iteration"));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", cfg.eta)));
    }
    check_shapes(op, y, net)?;
    let started = Instant::now();
    let z = Tensor::<S>::randn(op.domain_shape(), &mut Rng::stream(cfg.input_noise_seed, 0));
    let (y, scale) = if cfg.normalize_measurements {
        normalize_measurements(op, y, net, &z)?
    } else {
        (y.clone(), 1.0)
    };
    let obj = Objective {
        tv: cfg.tv_weight,
        freq_l1: cfg.freq_l1_weight,
    };
    let mut adam = AdamState::new(net.params());
    let losses = fit(op, &y, net, &mut adam, &z, obj, cfg.iterations, cfg.eta, 0)?;
    let out = net.denoise(&z)?.scale(S::lit(1.0 / scale));
    Ok((
        out,
        DipTrace {
            losses,
            scale,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseBasis {
    Identity,
    /// Orthonormal real Fourier atoms: DC, `cos`/`sin` pairs, Nyquist.
    RealFourier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmBpConfig {
    pub rho: f64,
    pub max_iterations: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub basis: SparseBasis,
    /// Adapt `ρ` to keep primal and dual residuals within a factor `mu`.
    pub residual_balancing: bool,
    pub balance_mu: f64,
    pub balance_tau: f64,
}

impl Default for AdmmBpConfig {
    fn default() -> Self {
        AdmmBpConfig {
            rho: 1.0,
            max_iterations: 20_000,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            basis: SparseBasis::Identity,
            residual_balancing: false,
            balance_mu: 10.0,
            balance_tau: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmmRecord {
    pub iteration: usize,
    pub rho: f64,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct AdmmResult {
    /// Sparse coefficients `z` in the chosen basis.
    pub coefficients: Vec<f64>,
    /// Reconstructed signal `B^H z`.
    pub signal: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<AdmmRecord>,
}

/// `sign(v) · max(|v| - κ, 0)`.
pub fn shrink(v: f64, kappa: f64) -> f64 {
    v.signum() * (v.abs() - kappa).max(0.0)
}

/// Orthonormal real Fourier analysis matrix `B` (`n × n`, row-major): row 0
/// is DC, rows `2k-1`, `2k` are the `cos`/`sin` atoms of frequency `k`, and
/// for even `n` the last row is the Nyquist atom.
pub fn real_fourier_basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    let nf = n as f64;
    let dc = 1.0 / nf.sqrt();
    let pair = (2.0 / nf).sqrt();
    for j in 0..n {
        b[j] = dc;
    }
    for k in 1..=(n.saturating_sub(1)) / 2 {
        for j in 0..n {
            let phase = 2.0 * std::f64::consts::PI * (k * j) as f64 / nf;
            b[(2 * k - 1) * n + j] = pair * phase.cos();
            b[2 * k * n + j] = pair * phase.sin();
        }
    }
    if n % 2 == 0 && n > 1 {
        for j in 0..n {
            b[(n - 1) * n + j] = if j % 2 == 0 { dc } else { -dc };
        }
    }
    b
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return Err(Error::RankDeficient { index: i, pivot: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Affine projection `v ↦ v - Ã^T (Ã Ã^T)^{-1} (Ã v - y)` with a cached factor.
struct Projector {
    a: Vec<f64>,
    rows: usize,
    cols: usize,
    chol: Vec<f64>,
}

impl Projector {
    fn new(a: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        let mut gram = vec![0.0; rows * rows];
        f64::gemm(rows, cols, rows, &a, false, &a, true, &mut gram, false);
        let chol = cholesky(&gram, rows)?;
        Ok(Projector { a, rows, cols, chol })
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut av = vec![0.0; self.rows];
        f64::gemm(self.rows, self.cols, 1, &self.a, false, v, false, &mut av, false);
        av
    }

    fn project(&self, v: &[f64], y: &[f64]) -> Vec<f64> {
        let mut r = self.apply(v);
        r.iter_mut().zip(y).for_each(|(ri, yi)| *ri -= yi);
        let w = cholesky_solve(&self.chol, self.rows, &r);
        let mut corr = vec![0.0; self.cols];
        f64::gemm(self.cols, self.rows, 1, &self.a, true, &w, false, &mut corr, false);
        v.iter().zip(&corr).map(|(a, b)| a - b).collect()
    }
}

/// `min ‖z‖₁ s.t. A B^H z = y` by ADMM (`A` is `rows × cols`, row-major).
///
/// `x ← Π(z - u)`, `z ← shrink(x + u, 1/ρ)`, `u ← u + x - z`, stopping when
/// `‖x - z‖ ≤ ε_pri` and `ρ‖z - z_prev‖ ≤ ε_dual` with
/// `ε_pri = √n·abs + rel·max(‖x‖, ‖z‖)` and `ε_dual = √n·abs + rel·‖ρu‖`.
pub fn admm_bp<S: Scalar>(a: &[S], rows: usize, cols: usize, y: &[S], cfg: &AdmmBpConfig) -> Result<AdmmResult> {
    if a.len() != rows * cols || y.len() != rows {
        return Err(Error::shape("admm_bp", &[rows, cols], &[a.len(), y.len()]));
    }
    if !(cfg.rho > 0.0) || !(cfg.abs_tol > 0.0) || !(cfg.rel_tol > 0.0) || cfg.max_iterations == 0 {
        return Err(Error::invalid(format!("invalid ADMM configuration {cfg:?}")));
    }
    let a: Vec<f64> = a.iter().map(|v| v.f64()).collect();
    let y: Vec<f64> = y.iter().map(|v| v.f64()).collect();
    let basis = match cfg.basis {
        SparseBasis::Identity => None,
        SparseBasis::RealFourier => Some(real_fourier_basis(cols)),
    };
    let a_tilde = match &basis {
        None => a,
        Some(b) => {
            let mut at = vec![0.0; rows * cols];
            f64::gemm(rows, cols, cols, &a, false, b, true, &mut at, false);
            at
        }
    };
    let proj = Projector::new(a_tilde, rows, cols)?;
    let n = cols;
    let sqrt_n = (n as f64).sqrt();
    let mut rho = cfg.rho;
    let mut z = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iterations {
        let v: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a - b).collect();
        let x = proj.project(&v, &y);
        let z_old = std::mem::take(&mut z);
        z = x.iter().zip(&u).map(|(xi, ui)| shrink(xi + ui, 1.0 / rho)).collect();
        u.iter_mut().zip(x.iter().zip(&z)).for_each(|(ui, (xi, zi))| *ui += xi - zi);

        let r_norm = norm(&x.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
        let s_norm = rho * norm(&z.iter().zip(&z_old).map(|(a, b)| a - b).collect::<Vec<_>>());
        let eps_pri = sqrt_n * cfg.abs_tol + cfg.rel_tol * norm(&x).max(norm(&z));
        let eps_dual = sqrt_n * cfg.abs_tol + cfg.rel_tol * rho * norm(&u);
        history.push(AdmmRecord {
            iteration: it,
            rho,
            r_norm,
            s_norm,
            eps_pri,
            eps_dual,
            objective: z.iter().map(|v| v.abs()).sum(),
        });
        iterations = it + 1;
        if r_norm < eps_pri && s_norm < eps_dual {
            converged = true;
            break;
        }
        if cfg.residual_balancing {
            if r_norm > cfg.balance_mu * s_norm {
                rho *= cfg.balance_tau;
                u.iter_mut().for_each(|v| *v /= cfg.balance_tau);
            } else if s_norm > cfg.balance_mu * r_norm {
                rho /= cfg.balance_tau;
                u.iter_mut().for_each(|v| *v *= cfg.balance_tau);
            }
        }
    }
    let signal = match &basis {
        None => z.clone(),
        Some(b) => {
            let mut s = vec![0.0; n];
            f64::gemm(n, n, 1, b, true, &z, false, &mut s, false);
            s
        }
    };
    Ok(AdmmResult {
        coefficients: z,
        signal,
        iterations,
        converged,
        history,
    })
}

/// Apply the affine projection of `admm_bp` once; exposed for checking that
/// `Ã Π(v) = y` holds to machine precision.
pub fn project_affine(a: &[f64], rows: usize, cols: usize, v: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Projector::new(a.to_vec(), rows, cols).map(|p| p.project(v, y))
}
