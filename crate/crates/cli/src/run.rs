//! Experiment execution and result files.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.resolved.toml     every field, defaults filled in
//! task/                    ground truth, measurements, operator payloads (raw)
//! <method>/                reconstruction.{raw,csv|pgm} and per-method traces
//! metrics.csv              one row per finished method (deterministic)
//! diagnostics.csv          Taylor check rows, if enabled
//! timing.csv               wall-clock seconds per method
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use selfdiff::baselines::{admm_bp, dip_solve, AdmmResult, DipTrace};
use selfdiff::diagnostics::{self as metrics, drift_alignment, spectral_trace, taylor_check, SpectralTrace};
use selfdiff::io::{write_pgm, write_raw, write_signal_csv};
use selfdiff::{LinearMap, NoiseMode, RunTrace, Scalar, SdiConfig, Tensor, UNet};
use serde::Serialize;

use crate::config::{derive_seed, ExperimentConfig, Method, Precision, TaskKind};
use crate::synth::{display_image, synthesize_task, Task};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Write here instead of `<output_dir>/<task>-<timestamp>`.
    pub run_dir: Option<PathBuf>,
    /// Validate and synthesize only; write nothing.
    pub dry_run: bool,
    pub quiet: bool,
}

/// Output of one method on one task.
pub struct MethodRun<S: Scalar> {
    pub method: Method,
    pub estimate: Tensor<S>,
    pub sdi: Option<RunTrace<S>>,
    pub dip: Option<DipTrace>,
    pub admm: Option<AdmmResult>,
    pub wall_time_secs: f64,
}

impl<S: Scalar> MethodRun<S> {
    /// Loss at the final iteration, when the method has one.
    pub fn final_loss(&self) -> Option<f64> {
        if let Some(t) = &self.sdi {
            return t.records.last().map(|r| r.loss);
        }
        self.dip.as_ref().and_then(|d| d.losses.last().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub task: &'static str,
    pub method: &'static str,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub nrmse: f64,
    /// `‖A x̂ - y‖ / ‖y‖`.
    pub residual: f64,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaylorRow {
    pub sigma: f64,
    pub mc_expected_loss: f64,
    pub mc_std_error: f64,
    pub fidelity_term: f64,
    pub jacobian_term: f64,
    pub predicted: f64,
    pub relative_gap: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub dir: Option<PathBuf>,
    pub rows: Vec<MetricsRow>,
    /// `(method, error)` for every method that aborted.
    pub failures: Vec<(Method, String)>,
}

fn sdi_variant(cfg: &SdiConfig, method: Method) -> SdiConfig {
    let mode = match method {
        Method::SdiFixed => NoiseMode::Fixed,
        Method::SdiNone => NoiseMode::None,
        _ => cfg.noise_mode,
    };
    SdiConfig {
        noise_mode: mode,
        ..cfg.clone()
    }
}

/// Run one method with a freshly initialized network from `cfg.denoiser`.
pub fn run_method<S: Scalar>(cfg: &ExperimentConfig, task: &Task<S>, method: Method) -> Result<MethodRun<S>> {
    let started = Instant::now();
    let mut out = MethodRun {
        method,
        estimate: Tensor::zeros(task.x_true.shape()),
        sdi: None,
        dip: None,
        admm: None,
        wall_time_secs: 0.0,
    };
    match method {
        Method::Sdi | Method::SdiFixed | Method::SdiNone => {
            let mut net = UNet::<S>::new(cfg.denoiser.clone())?;
            let scfg = sdi_variant(&cfg.sdi, method);
            let (x, trace) = selfdiff::sdi_solve(&task.op, &task.y, &mut net, &scfg, Some(&task.x_true))?;
            out.estimate = x;
            out.sdi = Some(trace);
        }
        Method::Dip => {
            let mut net = UNet::<S>::new(cfg.denoiser.clone())?;
            let (x, trace) = dip_solve(&task.op, &task.y, &mut net, &cfg.dip)?;
            out.estimate = x;
            out.dip = Some(trace);
        }
        Method::AdmmBp => {
            let (rows, cols, a) = task
                .op
                .matrix()
                .ok_or_else(|| anyhow!("admm-bp needs a dense sensing matrix"))?;
            let res = admm_bp(a, rows, cols, task.y.data(), &cfg.admm)?;
            out.estimate = Tensor::from_f64(task.x_true.shape(), &res.signal)?;
            out.admm = Some(res);
        }
    }
    out.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(out)
}

/// PSNR, SSIM (image tasks, when enabled), NRMSE and data residual.
pub fn score<S: Scalar>(cfg: &ExperimentConfig, task: &Task<S>, run: &MethodRun<S>) -> Result<MetricsRow> {
    let est = display_image(&run.estimate, task.complex)?;
    let truth = display_image(&task.x_true, task.complex)?;
    let peak = metrics::default_peak(&truth);
    let psnr = metrics::psnr(&est, &truth, peak)?;
    let ssim = if cfg.metrics.ssim && task.kind.is_image() {
        Some(metrics::ssim(&est, &truth, peak)?.ssim)
    } else {
        None
    };
    let nrmse = metrics::nrmse(&run.estimate, &task.x_true)?;
    let yn = task.y.norm().f64();
    let residual = task.op.apply(&run.estimate)?.sub(&task.y)?.norm().f64() / yn.max(f64::MIN_POSITIVE);
    Ok(MetricsRow {
        task: task.kind.name(),
        method: run.method.name(),
        seed: cfg.seed,
        psnr,
        ssim,
        nrmse,
        residual,
        final_loss: run.final_loss(),
    })
}

/// Spectral trace of an SDI run from its per-step snapshots.
pub fn sdi_spectra<S: Scalar>(trace: &RunTrace<S>, x_true: &Tensor<S>, complex: bool) -> Result<Option<SpectralTrace>> {
    let (steps, est): (Vec<usize>, Vec<&Tensor<S>>) = trace
        .records
        .iter()
        .filter_map(|r| r.snapshot.as_ref().map(|s| (r.t, s)))
        .unzip();
    if est.is_empty() {
        return Ok(None);
    }
    Ok(Some(spectral_trace(&steps, &est, x_true, complex)?))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    t: usize,
    sigma: f64,
    loss: f64,
    relative_change: f64,
    residual: f64,
    truth_error: Option<f64>,
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

#[derive(Serialize)]
struct ConvergenceRow {
    bin: usize,
    truth: f64,
    t_star: Option<usize>,
}

#[derive(Serialize)]
struct DriftRow {
    t: usize,
    alignment: Option<f64>,
}

#[derive(Serialize)]
struct TimingRow {
    method: &'static str,
    wall_time_secs: f64,
}

fn write_reconstruction<S: Scalar>(dir: &Path, task: &Task<S>, x: &Tensor<S>) -> Result<()> {
    write_raw(dir.join("reconstruction.raw"), x)?;
    if task.kind == TaskKind::Cs1d {
        write_signal_csv(dir.join("reconstruction.csv"), x)?;
    } else {
        write_pgm(dir.join("reconstruction.pgm"), &display_image(x, task.complex)?, 16)?;
    }
    Ok(())
}

fn write_method_outputs<S: Scalar>(cfg: &ExperimentConfig, dir: &Path, task: &Task<S>, run: &MethodRun<S>) -> Result<()> {
    let mdir = dir.join(run.method.name());
    fs::create_dir_all(&mdir)?;
    write_reconstruction(&mdir, task, &run.estimate)?;
    if let Some(trace) = &run.sdi {
        let rows: Vec<TraceRow> = trace
            .records
            .iter()
            .map(|r| TraceRow {
                t: r.t,
                sigma: r.sigma,
                loss: r.loss,
                relative_change: r.relative_change,
                residual: r.residual,
                truth_error: r.truth_error,
            })
            .collect();
        write_csv(&mdir.join("trace.csv"), &rows)?;
        if cfg.metrics.spectra && task.kind == TaskKind::Cs1d {
            if let Some(spec) = sdi_spectra(trace, &task.x_true, task.complex)? {
                let mut header = vec!["t".to_string()];
                header.extend((0..spec.bins()).map(|k| format!("bin{k}")));
                let mut rows = vec![std::iter::once("truth".to_string())
                    .chain(spec.truth.iter().map(|v| v.to_string()))
                    .collect::<Vec<_>>()];
                for (t, m) in spec.steps.iter().zip(&spec.magnitudes) {
                    rows.push(std::iter::once(t.to_string()).chain(m.iter().map(|v| v.to_string())).collect());
                }
                write_matrix(&mdir.join("spectra.csv"), &header, &rows)?;
                let conv: Vec<ConvergenceRow> = (0..spec.bins())
                    .map(|k| ConvergenceRow {
                        bin: k,
                        truth: spec.truth[k],
                        t_star: spec.convergence_step(k, cfg.metrics.convergence_band),
                    })
                    .collect();
                write_csv(&mdir.join("convergence.csv"), &conv)?;
            }
        }
        if cfg.metrics.drift {
            if let Some(est) = trace.estimates() {
                let align = drift_alignment(&est, &task.x_true)?;
                let rows: Vec<DriftRow> = trace
                    .records
                    .iter()
                    .zip(align)
                    .map(|(r, a)| DriftRow { t: r.t, alignment: a })
                    .collect();
                write_csv(&mdir.join("drift.csv"), &rows)?;
            }
        }
    }
    if let Some(dip) = &run.dip {
        let rows: Vec<LossRow> = dip
            .losses
            .iter()
            .enumerate()
            .map(|(i, &loss)| LossRow { iteration: i, loss })
            .collect();
        write_csv(&mdir.join("losses.csv"), &rows)?;
    }
    if let Some(admm) = &run.admm {
        write_csv(&mdir.join("admm.csv"), &admm.history)?;
        fs::write(
            mdir.join("admm_summary.txt"),
            format!("iterations = {}\nconverged = {}\n", admm.iterations, admm.converged),
        )?;
    }
    Ok(())
}

/// Taylor decomposition check of the fresh network at the initial SDI input.
pub fn taylor_rows<S: Scalar>(cfg: &ExperimentConfig, task: &Task<S>) -> Result<Vec<TaylorRow>> {
    let net = UNet::<S>::new(cfg.denoiser.clone())?;
    let x0 = Tensor::<S>::randn(task.op.domain_shape(), &mut selfdiff::Rng::stream(cfg.sdi.seed, 0));
    cfg.metrics
        .taylor_sigmas
        .iter()
        .map(|&sigma| {
            let r = taylor_check(
                &task.op,
                &net,
                &task.y,
                &x0,
                sigma,
                cfg.metrics.taylor_draws,
                derive_seed(cfg.seed, "taylor"),
            )?;
            Ok(TaylorRow {
                sigma,
                mc_expected_loss: r.mc_expected_loss,
                mc_std_error: r.mc_std_error,
                fidelity_term: r.fidelity_term,
                jacobian_term: r.jacobian_term,
                predicted: r.predicted(),
                relative_gap: r.relative_gap(),
            })
        })
        .collect()
}

pub fn default_run_dir(cfg: &ExperimentConfig, label: &str) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    cfg.output_dir.join(format!("{label}-{stamp}"))
}

fn write_task<S: Scalar>(dir: &Path, task: &Task<S>) -> Result<()> {
    let tdir = dir.join("task");
    fs::create_dir_all(&tdir)?;
    write_raw(tdir.join("x_true.raw"), &task.x_true)?;
    write_raw(tdir.join("y.raw"), &task.y)?;
    for (name, t) in &task.artifacts {
        write_raw(tdir.join(format!("{name}.raw")), t)?;
    }
    Ok(())
}

fn run_typed<S: Scalar>(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let task = synthesize_task::<S>(cfg)?;
    if opts.dry_run {
        return Ok(RunSummary {
            dir: None,
            rows: vec![],
            failures: vec![],
        });
    }
    let dir = opts.run_dir.clone().unwrap_or_else(|| default_run_dir(cfg, cfg.task.name()));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;
    write_task(&dir, &task)?;

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut failures = Vec::new();
    for &method in &cfg.methods {
        if !opts.quiet {
            eprintln!("[{}] running {}", cfg.task.name(), method.name());
        }
        match run_method(cfg, &task, method) {
            Ok(run) => {
                write_method_outputs(cfg, &dir, &task, &run)?;
                let row = score(cfg, &task, &run)?;
                if !opts.quiet {
                    eprintln!(
                        "[{}] {} finished in {:.1} s: psnr {:.2} dB, nrmse {:.4}",
                        cfg.task.name(),
                        method.name(),
                        run.wall_time_secs,
                        row.psnr,
                        row.nrmse
                    );
                }
                timing.push(TimingRow {
                    method: method.name(),
                    wall_time_secs: run.wall_time_secs,
                });
                rows.push(row);
            }
            Err(e) => {
                let msg = format!("{e:#}");
                if !opts.quiet {
                    eprintln!("[{}] {} aborted: {msg}", cfg.task.name(), method.name());
                }
                failures.push((method, msg));
            }
        }
        // Keep partial results on disk after each method.
        write_csv(&dir.join("metrics.csv"), &rows)?;
        write_csv(&dir.join("timing.csv"), &timing)?;
    }
    if cfg.metrics.taylor {
        write_csv(&dir.join("diagnostics.csv"), &taylor_rows(cfg, &task)?)?;
    }
    if !failures.is_empty() {
        let text: String = failures.iter().map(|(m, e)| format!("{}: {e}\n", m.name())).collect();
        fs::write(dir.join("failures.txt"), text)?;
    }
    Ok(RunSummary {
        dir: Some(dir),
        rows,
        failures,
    })
}

/// Resolve, validate and run every configured method.
pub fn run_experiment(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.resolve();
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(&cfg, opts),
        Precision::F32 => run_typed::<f32>(&cfg, opts),
    }
}
