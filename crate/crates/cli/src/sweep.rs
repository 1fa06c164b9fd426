//! `T × K` sensitivity sweeps.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use selfdiff::Scalar;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method, Precision};
use crate::run::{default_run_dir, run_method, score, RunOptions};
use crate::synth::synthesize_task;

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub steps: Vec<usize>,
    pub iterations: Vec<usize>,
    /// `psnr[i][j]` for `steps[i]`, `iterations[j]`.
    pub psnr: Vec<Vec<f64>>,
    pub dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct CellRow {
    steps: usize,
    iterations: usize,
    psnr: f64,
    ssim: Option<f64>,
    nrmse: f64,
}

/// Config for one cell: the base config with `T` and `K` replaced. A DIP
/// sweep uses the matched budget `T × K`.
pub fn cell_config(base: &ExperimentConfig, steps: usize, iterations: usize) -> ExperimentConfig {
    let mut c = base.clone();
    c.sdi.steps = steps;
    c.sdi.iterations = iterations;
    c.dip.iterations = steps * iterations;
    c.methods = vec![base.sweep.method];
    c.resolve();
    c
}

fn sweep_typed<S: Scalar>(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    let task = synthesize_task::<S>(cfg)?;
    let spec = &cfg.sweep;
    if opts.dry_run {
        return Ok(SweepResult {
            steps: spec.steps.clone(),
            iterations: spec.iterations.clone(),
            psnr: vec![],
            dir: None,
        });
    }
    let dir = opts
        .run_dir
        .clone()
        .unwrap_or_else(|| default_run_dir(cfg, &format!("sweep-{}", cfg.task.name())));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;

    let mut psnr = Vec::new();
    let mut cells = csv::Writer::from_path(dir.join("sweep.csv"))?;
    for &t in &spec.steps {
        let mut row = Vec::new();
        for &k in &spec.iterations {
            let c = cell_config(cfg, t, k);
            let run = run_method(&c, &task, spec.method).with_context(|| format!("cell T={t} K={k}"))?;
            let m = score(&c, &task, &run)?;
            if !opts.quiet {
                eprintln!("[sweep] T={t} K={k}: psnr {:.2} dB ({:.1} s)", m.psnr, run.wall_time_secs);
            }
            cells.serialize(CellRow {
                steps: t,
                iterations: k,
                psnr: m.psnr,
                ssim: m.ssim,
                nrmse: m.nrmse,
            })?;
            cells.flush()?;
            row.push(m.psnr);
        }
        psnr.push(row);
    }
    let mut w = csv::Writer::from_path(dir.join("psnr_matrix.csv"))?;
    let mut header = vec!["T\\K".to_string()];
    header.extend(spec.iterations.iter().map(|k| k.to_string()));
    w.write_record(&header)?;
    for (t, row) in spec.steps.iter().zip(&psnr) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.4}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(SweepResult {
        steps: spec.steps.clone(),
        iterations: spec.iterations.clone(),
        psnr,
        dir: Some(dir),
    })
}

pub fn run_sweep(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    cfg.resolve();
    cfg.validate()?;
    anyhow::ensure!(cfg.sweep.method != Method::AdmmBp, "admm-bp has no T/K parameters to sweep");
    anyhow::ensure!(
        !cfg.sweep.steps.is_empty() && !cfg.sweep.iterations.is_empty(),
        "sweep needs at least one T and one K"
    );
    match cfg.precision {
        Precision::F64 => sweep_typed::<f64>(&cfg, opts),
        Precision::F32 => sweep_typed::<f32>(&cfg, opts),
    }
}
