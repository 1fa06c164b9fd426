//! Experiment configuration (TOML).
//!
//! Every field has a default, so a config only needs the keys it changes.
//! All random seeds derive from the top-level `seed`; [`ExperimentConfig::resolve`]
//! fills the per-component seeds and shapes and the resolved config is echoed
//! into the run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use selfdiff::{AdmmBpConfig, DenoiserConfig, DipConfig, SdiConfig};
use serde::{Deserialize, Serialize};

use crate::synth::SignalSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Cs1d,
    Inpaint,
    Deblur,
    Sr,
    Denoise,
    Fourier2d,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Cs1d => "cs1d",
            TaskKind::Inpaint => "inpaint",
            TaskKind::Deblur => "deblur",
            TaskKind::Sr => "sr",
            TaskKind::Denoise => "denoise",
            TaskKind::Fourier2d => "fourier2d",
        }
    }

    pub fn is_image(self) -> bool {
        self != TaskKind::Cs1d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sdi,
    SdiFixed,
    SdiNone,
    Dip,
    AdmmBp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdi => "sdi",
            Method::SdiFixed => "sdi-fixed",
            Method::SdiNone => "sdi-none",
            Method::Dip => "dip",
            Method::AdmmBp => "admm-bp",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    #[default]
    Equispaced,
    Random,
}

/// Ground-truth image for the image tasks: a PGM/raw file or a built-in
/// procedural test image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSource {
    pub path: Option<PathBuf>,
    pub procedural: Option<usize>,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorParams {
    /// Rows of the Gaussian sensing matrix (cs1d).
    pub measurements: usize,
    pub mask_coverage_min: f64,
    pub mask_coverage_max: f64,
    /// Mask file for inpainting instead of random rectangles.
    pub mask_path: Option<PathBuf>,
    /// Blur kernel file; otherwise a linear-motion kernel is generated.
    pub kernel_path: Option<PathBuf>,
    pub kernel_size: usize,
    pub motion_length: f64,
    pub motion_angle: f64,
    pub boundary: selfdiff::operators::Boundary,
    pub pool_factor: usize,
    /// Additive Gaussian noise on the measurements (on `[0, 1]` images);
    /// the denoise task uses `denoise_sigma` instead.
    pub measurement_noise: f64,
    pub denoise_sigma: f64,
    pub pattern: PatternKind,
    pub accel: usize,
    pub center_lines: usize,
    pub keep: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams {
            measurements: 35,
            mask_coverage_min: 0.10,
            mask_coverage_max: 0.25,
            mask_path: None,
            kernel_path: None,
            kernel_size: 15,
            motion_length: 9.0,
            motion_angle: 30.0,
            boundary: Default::default(),
            pool_factor: 2,
            measurement_noise: 0.0,
            denoise_sigma: 25.0 / 255.0,
            pattern: PatternKind::Equispaced,
            accel: 6,
            center_lines: 4,
            keep: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub ssim: bool,
    /// Per-step spectra and convergence steps (1D tasks).
    pub spectra: bool,
    pub convergence_band: f64,
    pub drift: bool,
    /// Taylor decomposition check on the fresh network.
    pub taylor: bool,
    pub taylor_sigmas: Vec<f64>,
    pub taylor_draws: usize,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            ssim: true,
            spectra: true,
            convergence_band: selfdiff::diagnostics::CONVERGENCE_BAND,
            drift: true,
            taylor: false,
            taylor_sigmas: vec![1e-3, 1e-2],
            taylor_draws: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub steps: Vec<usize>,
    pub iterations: Vec<usize>,
    pub method: Method,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            steps: vec![10, 20, 40],
            iterations: vec![25, 50, 100, 200],
            method: Method::Sdi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub precision: Precision,
    pub signal: SignalSpec,
    pub image: ImageSource,
    pub operator: OperatorParams,
    pub denoiser: DenoiserConfig,
    pub sdi: SdiConfig,
    /// `iterations = 0` means `T × K` of the solver config.
    pub dip: DipConfig,
    pub admm: AdmmBpConfig,
    pub metrics: MetricToggles,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Cs1d,
            methods: vec![Method::Sdi],
            seed: 0,
            output_dir: PathBuf::from("runs"),
            precision: Precision::F64,
            signal: SignalSpec::default(),
            image: ImageSource {
                size: 64,
                ..Default::default()
            },
            operator: OperatorParams::default(),
            denoiser: DenoiserConfig::default(),
            sdi: SdiConfig::default(),
            dip: DipConfig {
                iterations: 0,
                ..Default::default()
            },
            admm: AdmmBpConfig::default(),
            metrics: MetricToggles::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Mix a label into a seed (splitmix64 finalizer over an FNV-1a hash), so
/// independent components never share a random stream. The result fits in
/// 63 bits so it survives the TOML echo.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    (z ^ (z >> 31)) >> 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing experiment config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    /// Spatial shape and channel count of the reconstruction.
    pub fn domain(&self) -> (Vec<usize>, usize) {
        match self.task {
            TaskKind::Cs1d => (vec![self.signal.n], 1),
            TaskKind::Fourier2d => (vec![self.image.size, self.image.size], 2),
            _ => (vec![self.image.size, self.image.size], 1),
        }
    }

    /// Fill derived fields: seeds, network shape, compute-matched DIP budget.
    pub fn resolve(&mut self) {
        let (spatial, channels) = self.domain();
        self.denoiser.spatial = spatial;
        self.denoiser.in_channels = channels;
        self.denoiser.out_channels = channels;
        self.denoiser.seed = derive_seed(self.seed, "denoiser");
        self.sdi.seed = self.seed;
        self.dip.input_noise_seed = self.seed;
        if self.dip.iterations == 0 {
            self.dip.iterations = self.sdi.steps * self.sdi.iterations;
        }
        // Spectra and drift are computed from per-step snapshots.
        if self.sdi.snapshot_every == 0 && (self.metrics.spectra || self.metrics.drift) {
            self.sdi.snapshot_every = 1;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        if self.task.is_image() && self.image.path.is_none() && self.image.procedural.is_none() {
            bail!("task {} needs an input image: set image.path or image.procedural", self.task.name());
        }
        if self.methods.contains(&Method::AdmmBp) && self.task != TaskKind::Cs1d {
            bail!("admm-bp needs a dense sensing matrix and only runs on cs1d");
        }
        if self.task == TaskKind::Cs1d {
            self.signal.validate()?;
        }
        self.sdi.validate()?;
        self.denoiser.validate()?;
        if !(self.operator.mask_coverage_min <= self.operator.mask_coverage_max) {
            bail!("mask coverage min exceeds max");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolve();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("task = \"sr\"\n[sdi]\nsteps = 5\n").unwrap();
        assert_eq!(cfg.task, TaskKind::Sr);
        assert_eq!(cfg.sdi.steps, 5);
        assert_eq!(cfg.sdi.iterations, SdiConfig::default().iterations);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn image_task_without_image_rejected() {
        let mut cfg = ExperimentConfig {
            task: TaskKind::Inpaint,
            ..Default::default()
        };
        cfg.resolve();
        assert!(cfg.validate().is_err());
        cfg.image.procedural = Some(0);
        cfg.resolve();
        cfg.validate().unwrap();
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
