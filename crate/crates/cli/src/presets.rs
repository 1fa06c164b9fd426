//! Built-in experiment presets.

use anyhow::{bail, Result};
use selfdiff::{AdmmBpConfig, DenoiserConfig, DipConfig, Head, SdiConfig, SparseBasis};

use crate::config::{ExperimentConfig, ImageSource, Method, PatternKind, SweepSpec, TaskKind};

pub const PRESETS: &[(&str, &str)] = &[
    ("cs1d", "1D sum-of-sines, 35 Gaussian measurements of 128 samples; SDI vs DIP vs ADMM-BP"),
    ("inpaint", "64x64 inpainting with random rectangular holes; SDI, SDI without noise, DIP"),
    ("deblur", "64x64 linear-motion deblurring; SDI, SDI with fixed noise, DIP"),
    ("sr", "64x64 2x super-resolution by average pooling; SDI, SDI without noise, DIP"),
    ("sr4", "64x64 4x super-resolution by average pooling; SDI, DIP"),
    ("denoise", "64x64 Gaussian denoising at sigma = 25/255; SDI vs DIP"),
    ("fourier2d", "64x64 toy k-space reconstruction, 6x equispaced columns; SDI vs DIP"),
    ("sensitivity", "PSNR over a T x K grid on the toy k-space task"),
    ("sensitivity-1d", "PSNR over K at T = 40 on the 1D task"),
];

/// Real-valued images live in `[0, 1]`, so these presets use a sigmoid head.
fn image_task(task: TaskKind, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        task,
        methods,
        denoiser: DenoiserConfig {
            head: Head::Sigmoid,
            ..Default::default()
        },
        image: ImageSource {
            procedural: Some(0),
            size: 64,
            ..Default::default()
        },
        sdi: SdiConfig {
            steps: 40,
            iterations: 150,
            eta: 1e-3,
            beta_start: 1e-4,
            beta_end: 1e-2,
            ..Default::default()
        },
        dip: DipConfig {
            iterations: 0,
            eta: 1e-3,
            tv_weight: 1e-4,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "cs1d" => ExperimentConfig {
            task: TaskKind::Cs1d,
            methods: vec![Method::Sdi, Method::Dip, Method::AdmmBp],
            sdi: SdiConfig {
                steps: 40,
                iterations: 200,
                eta: 1e-5,
                beta_start: 4e-3,
                beta_end: 1e-6,
                freq_l1_weight: 1e-3,
                ..Default::default()
            },
            dip: DipConfig {
                iterations: 0,
                eta: 1e-5,
                freq_l1_weight: 1e-3,
                ..Default::default()
            },
            // The test signal is sparse in frequency.
            admm: AdmmBpConfig {
                basis: SparseBasis::RealFourier,
                ..Default::default()
            },
            ..Default::default()
        },
        "inpaint" => image_task(TaskKind::Inpaint, vec![Method::Sdi, Method::SdiNone, Method::Dip]),
        "deblur" => image_task(TaskKind::Deblur, vec![Method::Sdi, Method::SdiFixed, Method::Dip]),
        "sr" => image_task(TaskKind::Sr, vec![Method::Sdi, Method::SdiNone, Method::Dip]),
        "sr4" => {
            let mut c = image_task(TaskKind::Sr, vec![Method::Sdi, Method::Dip]);
            c.operator.pool_factor = 4;
            c
        }
        "denoise" => {
            let mut c = image_task(TaskKind::Denoise, vec![Method::Sdi, Method::Dip]);
            c.sdi = SdiConfig {
                steps: 30,
                iterations: 100,
                eta: 2e-3,
                beta_start: 1e-2,
                beta_end: 8e-4,
                ..Default::default()
            };
            c.dip = DipConfig {
                iterations: 3000,
                eta: 2e-3,
                tv_weight: 5e-4,
                ..Default::default()
            };
            c
        }
        "fourier2d" | "sensitivity" => {
            let mut c = image_task(TaskKind::Fourier2d, vec![Method::Sdi, Method::Dip]);
            // The planar imaginary channel must be able to reach zero.
            c.denoiser.head = Head::Linear;
            c.operator.pattern = PatternKind::Equispaced;
            c.operator.accel = 6;
            c.operator.center_lines = 4;
            c.sdi = SdiConfig {
                steps: 40,
                iterations: 50,
                eta: 1e-3,
                beta_start: 1e-3,
                beta_end: 1e-4,
                tv_weight: 1e-4,
                ..Default::default()
            };
            c.dip.tv_weight = 1e-4;
            if name == "sensitivity" {
                c.methods = vec![Method::Sdi];
                c.sweep = SweepSpec {
                    steps: vec![10, 20, 40],
                    iterations: vec![25, 50, 75, 100, 150, 200, 300, 400, 500],
                    method: Method::Sdi,
                };
            }
            c
        }
        "sensitivity-1d" => {
            let mut c = preset("cs1d")?;
            c.methods = vec![Method::Sdi];
            c.sweep = SweepSpec {
                steps: vec![40],
                iterations: vec![25, 100, 300, 500],
                method: Method::Sdi,
            };
            c
        }
        other => bail!(
            "unknown preset {other:?}; available: {}",
            PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
        ),
    };
    Ok(cfg)
}
