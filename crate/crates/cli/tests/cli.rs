use std::path::Path;
use std::process::Command;

use selfdiff::{LinearMap, Tensor};
use selfdiff_cli::{
    preset, run_experiment, run_sweep, synthesize_task, ExperimentConfig, Method, RunOptions, TaskKind,
};

/// A cs1d config small enough to run in well under a second.
fn tiny_cs1d() -> ExperimentConfig {
    let mut cfg = preset("cs1d").unwrap();
    cfg.signal.n = 64;
    cfg.denoiser.base_channels = 4;
    cfg.denoiser.depth = 2;
    cfg.sdi.steps = 3;
    cfg.sdi.iterations = 4;
    cfg.sdi.eta = 1e-3;
    cfg.dip.eta = 1e-3;
    cfg.metrics.spectra = true;
    cfg.metrics.drift = true;
    cfg
}

fn tiny_image(task: &str) -> ExperimentConfig {
    let mut cfg = preset(task).unwrap();
    cfg.image.size = 16;
    cfg.denoiser.base_channels = 2;
    cfg.denoiser.depth = 1;
    cfg.sdi.steps = 2;
    cfg.sdi.iterations = 2;
    cfg.dip.iterations = 0;
    cfg
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        run_dir: Some(dir.to_path_buf()),
        dry_run: false,
        quiet: true,
    }
}

#[test]
fn tiny_run_writes_the_run_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let summary = run_experiment(tiny_cs1d(), &opts(&dir)).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    assert_eq!(summary.rows.len(), 3);
    for f in ["config.resolved.toml", "metrics.csv", "timing.csv", "sdi/trace.csv", "sdi/spectra.csv", "dip/reconstruction.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    // The resolved config reproduces itself.
    let text = std::fs::read_to_string(dir.join("config.resolved.toml")).unwrap();
    let back = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(back.to_toml().unwrap(), text);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(tiny_cs1d(), &opts(&a)).unwrap();
    run_experiment(tiny_cs1d(), &opts(&b)).unwrap();
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    let mb = std::fs::read(b.join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
    let ra = std::fs::read(a.join("sdi/reconstruction.raw")).unwrap();
    let rb = std::fs::read(b.join("sdi/reconstruction.raw")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let o = RunOptions {
        dry_run: true,
        ..opts(&dir)
    };
    let summary = run_experiment(tiny_cs1d(), &o).unwrap();
    assert!(summary.rows.is_empty());
    assert!(!dir.exists());
}

#[test]
fn sweep_matrix_has_one_cell_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cs1d();
    cfg.sweep.steps = vec![1, 2];
    cfg.sweep.iterations = vec![1, 2, 3];
    let dir = tmp.path().join("sweep");
    let res = run_sweep(cfg, &opts(&dir)).unwrap();
    assert_eq!(res.psnr.len(), 2);
    assert!(res.psnr.iter().all(|r| r.len() == 3 && r.iter().all(|v| v.is_finite())));
    let matrix = std::fs::read_to_string(dir.join("psnr_matrix.csv")).unwrap();
    let lines: Vec<&str> = matrix.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(',').count(), 4);
}

#[test]
fn admm_is_rejected_for_image_tasks() {
    let mut cfg = tiny_image("inpaint");
    cfg.methods = vec![Method::AdmmBp];
    cfg.resolve();
    assert!(cfg.validate().is_err());
}

#[test]
fn synthesis_shapes_and_noise() {
    let mut cfg = preset("cs1d").unwrap();
    cfg.resolve();
    let t = synthesize_task::<f64>(&cfg).unwrap();
    assert_eq!(t.y.shape(), &[35]);
    assert_eq!(t.x_true.shape(), &[1, 128]);

    let mut cfg = preset("sr").unwrap();
    cfg.resolve();
    let t = synthesize_task::<f64>(&cfg).unwrap();
    assert_eq!(t.kind, TaskKind::Sr);
    assert_eq!(t.x_true.shape(), &[1, 64, 64]);
    assert_eq!(t.y.shape(), &[1, 32, 32]);

    let mut cfg = preset("denoise").unwrap();
    cfg.resolve();
    let t = synthesize_task::<f64>(&cfg).unwrap();
    let clean = t.op.apply(&t.x_true).unwrap();
    let resid = t.y.sub(&clean).unwrap();
    let var = resid.data().iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;
    let s2 = cfg.operator.denoise_sigma.powi(2);
    assert!((var / s2 - 1.0).abs() < 0.1, "variance {var} vs {s2}");

    let mut cfg = preset("fourier2d").unwrap();
    cfg.resolve();
    let t = synthesize_task::<f64>(&cfg).unwrap();
    assert!(t.complex);
    assert_eq!(t.x_true.shape(), &[2, 64, 64]);
}

#[test]
fn every_image_task_runs() {
    for task in ["inpaint", "deblur", "sr", "denoise", "fourier2d"] {
        let tmp = tempfile::tempdir().unwrap();
        let summary = run_experiment(tiny_image(task), &opts(tmp.path())).unwrap();
        assert!(summary.failures.is_empty(), "{task}: {:?}", summary.failures);
        assert!(summary.rows.iter().all(|r| r.psnr.is_finite() && r.ssim.is_some()), "{task}");
        assert!(tmp.path().join("sdi/reconstruction.pgm").exists(), "{task}");
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selfdiff"))
}

#[test]
fn binary_subcommands() {
    let out = bin().args(["schedule-dump", "--steps", "5", "--beta-start", "1e-2", "--beta-end", "1e-4"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);

    let out = bin().args(["preset"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("cs1d"));

    let out = bin().args(["adjoint-check", "--preset", "deblur", "--probes", "4"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let tmp = tempfile::tempdir().unwrap();
    let mask = tmp.path().join("m.pgm");
    let out = bin().args(["make-mask", "--size", "16", "-o"]).arg(&mask).output().unwrap();
    assert!(out.status.success());
    let m: Tensor<f64> = selfdiff::io::read_tensor(&mask).unwrap();
    assert_eq!(m.len(), 256);

    let out = bin().args(["run", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_run_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("c.toml");
    std::fs::write(&cfg_path, tiny_cs1d().to_toml().unwrap()).unwrap();
    let dir = tmp.path().join("out");
    let out = bin().arg("run").arg(&cfg_path).arg("--run-dir").arg(&dir).arg("-q").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
}
