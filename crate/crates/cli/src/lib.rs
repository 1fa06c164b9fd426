//! Experiment runner for `selfdiff`: TOML configs, task synthesis, presets,
//! single runs and `T × K` sweeps.

pub mod config;
pub mod presets;
pub mod run;
pub mod sweep;
pub mod synth;

pub use config::{derive_seed, ExperimentConfig, Method, Precision, TaskKind};
pub use presets::{preset, PRESETS};
pub use run::{run_experiment, run_method, score, MethodRun, MetricsRow, RunOptions, RunSummary};
pub use sweep::{run_sweep, SweepResult};
pub use synth::{generate_signal, procedural_image, synthesize_task, SignalSpec, Task};
