use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use selfdiff::autodiff::grad_check;
use selfdiff::diagnostics::taylor_check;
use selfdiff::io::{write_pgm, write_raw};
use selfdiff::operators::{motion_kernel, rect_mask, MaskCoverage};
use selfdiff::{adjoint_test, LinearMap, NoiseSchedule, Rng, Tensor, UNet};
use selfdiff_cli::{derive_seed, preset, run_experiment, run_sweep, synthesize_task, ExperimentConfig, RunOptions, PRESETS};

#[derive(Parser)]
#[command(name = "selfdiff", version, about = "Self-diffusion reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML).
    config: Option<PathBuf>,
    /// Start from a built-in preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every n-th per-step snapshot (0 disables).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Override the output root.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => bail!("pass a config file or --preset NAME"),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.snapshot_every {
            cfg.sdi.snapshot_every = n;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }

    fn resolved(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.load()?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Validate the config and synthesize the task without writing anything.
    #[arg(long)]
    dry_run: bool,
    /// Exact output directory instead of a timestamped one.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            run_dir: self.run_dir.clone(),
            dry_run: self.dry_run,
            quiet: self.quiet,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every method of an experiment.
    Run(RunArgs),
    /// Sweep T x K and write a PSNR matrix.
    Sweep(RunArgs),
    /// Print a preset as TOML, or list presets.
    Preset { name: Option<String> },
    /// Print a noise schedule as CSV.
    ScheduleDump {
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 1e-2)]
        beta_end: f64,
        #[arg(long)]
        reverse: bool,
        /// Take the schedule from a config instead.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Dot-product adjoint test of the configured operator.
    AdjointCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 8)]
        probes: usize,
    },
    /// Finite-difference check of the data-loss gradient through the network.
    GradCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Compare the Monte-Carlo noisy loss with its second-order expansion.
    TaylorCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        draws: usize,
    },
    /// Write a random rectangular inpainting mask (PGM or raw by extension).
    MakeMask {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.10)]
        min: f64,
        #[arg(long, default_value_t = 0.25)]
        max: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write a normalized linear-motion blur kernel.
    MakeKernel {
        #[arg(long, default_value_t = 15)]
        size: usize,
        #[arg(long, default_value_t = 9.0)]
        length: f64,
        #[arg(long, default_value_t = 30.0)]
        angle: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config.load()?;
    let summary = run_experiment(cfg, &args.options())?;
    match &summary.dir {
        None => println!("config ok"),
        Some(dir) => println!("{}", dir.display()),
    }
    for (m, e) in &summary.failures {
        eprintln!("method {} aborted: {e}", m.name());
    }
    Ok(if summary.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_sweep(args: &RunArgs) -> Result<ExitCode> {
    let res = run_sweep(args.config.load()?, &args.options())?;
    match &res.dir {
        None => println!("config ok"),
        Some(dir) => println!("{}", dir.display()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_schedule(steps: usize, bs: f64, be: f64, reverse: bool, config: Option<&Path>) -> Result<()> {
    let sched = match config {
        Some(p) => {
            let mut cfg = ExperimentConfig::load(p)?;
            cfg.resolve();
            cfg.sdi.schedule()?
        }
        None => NoiseSchedule::new(steps, bs, be, reverse)?,
    };
    println!("t,beta,alpha_bar,sigma");
    for (t, b, a, s) in sched.rows() {
        println!("{t},{b},{a},{s}");
    }
    Ok(())
}

fn cmd_adjoint(args: &ConfigArgs, probes: usize) -> Result<()> {
    let cfg = args.resolved()?;
    let task = synthesize_task::<f64>(&cfg)?;
    let err = adjoint_test(&task.op, derive_seed(cfg.seed, "adjoint"), probes)?;
    println!("{} {:?}: max relative adjoint error {err:.3e}", cfg.task.name(), task.op.kind());
    Ok(())
}

fn cmd_grad(args: &ConfigArgs, samples: usize, step: f64) -> Result<()> {
    let cfg = args.resolved()?;
    let task = synthesize_task::<f64>(&cfg)?;
    let net = UNet::<f64>::new(cfg.denoiser.clone())?;
    let x = Tensor::<f64>::randn(task.op.domain_shape(), &mut Rng::stream(cfg.seed, 0));
    let (op, y) = (&task.op, &task.y);
    let report = grad_check(
        net.params(),
        |g, p| {
            let xv = g.constant(x.clone())?;
            let d = net.forward(g, p, xv)?;
            let ad = g.linear(d, op)?;
            let yv = g.constant(y.clone())?;
            let r = g.sub(ad, yv)?;
            g.norm_sq(r)
        },
        step,
        samples,
        derive_seed(cfg.seed, "grad-check"),
    )?;
    println!(
        "{} parameters, {} entries checked: max relative error {:.3e} at {:?} ({})",
        net.param_count(),
        report.checked,
        report.max_rel_error,
        report.worst,
        net.param_names()[report.worst.0]
    );
    Ok(())
}

fn cmd_taylor(args: &ConfigArgs, sigmas: &[f64], draws: usize) -> Result<()> {
    let cfg = args.resolved()?;
    let task = synthesize_task::<f64>(&cfg)?;
    let net = UNet::<f64>::new(cfg.denoiser.clone())?;
    let x0 = Tensor::<f64>::randn(task.op.domain_shape(), &mut Rng::stream(cfg.seed, 0));
    println!("sigma,mc_expected_loss,mc_std_error,fidelity_term,jacobian_term,predicted,relative_gap");
    for &sigma in sigmas {
        let r = taylor_check(&task.op, &net, &task.y, &x0, sigma, draws, derive_seed(cfg.seed, "taylor"))?;
        println!(
            "{sigma},{},{},{},{},{},{}",
            r.mc_expected_loss,
            r.mc_std_error,
            r.fidelity_term,
            r.jacobian_term,
            r.predicted(),
            r.relative_gap()
        );
    }
    Ok(())
}

fn write_image(path: &Path, t: &Tensor<f64>) -> Result<()> {
    if is_pgm(path) {
        write_pgm(path, t, 8)?;
    } else {
        write_raw(path, t)?;
    }
    Ok(())
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(a) => return cmd_run(a),
        Command::Sweep(a) => return cmd_sweep(a),
        Command::Preset { name: None } => {
            for (name, about) in PRESETS {
                println!("{name:<16} {about}");
            }
        }
        Command::Preset { name: Some(n) } => {
            let mut cfg = preset(n)?;
            cfg.resolve();
            print!("{}", cfg.to_toml()?);
        }
        Command::ScheduleDump {
            steps,
            beta_start,
            beta_end,
            reverse,
            config,
        } => cmd_schedule(*steps, *beta_start, *beta_end, *reverse, config.as_deref())?,
        Command::AdjointCheck { config, probes } => cmd_adjoint(config, *probes)?,
        Command::GradCheck { config, samples, step } => cmd_grad(config, *samples, *step)?,
        Command::TaylorCheck { config, sigma, draws } => cmd_taylor(config, sigma, *draws)?,
        Command::MakeMask {
            size,
            seed,
            min,
            max,
            out,
        } => {
            let m: Tensor<f64> = rect_mask(*size, *size, MaskCoverage { min: *min, max: *max }, *seed)?;
            write_image(out, &m).with_context(|| format!("writing {}", out.display()))?;
            println!("removed fraction {:.4}", 1.0 - m.mean());
        }
        Command::MakeKernel {
            size,
            length,
            angle,
            out,
        } => {
            let k: Tensor<f64> = motion_kernel(*size, *length, *angle)?;
            if is_pgm(out) {
                // PGM stores values in [0, 1]; rescale so the peak is white.
                write_pgm(out, &k.scale(1.0 / k.max_abs()), 16)?;
            } else {
                write_raw(out, &k)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
