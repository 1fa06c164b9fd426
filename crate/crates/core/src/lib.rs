//! Self-diffusion reconstruction for linear inverse problems.
//!
//! An untrained convolutional denoiser is optimized in place while a scheduled
//! noise level is annealed toward zero. The crate ships the tensor/autodiff
//! core, the forward operators, the solver, DIP and ADMM basis-pursuit
//! baselines, and diagnostics.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision defaults.

pub mod autodiff;
pub mod baselines;
pub mod denoiser;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod io;
pub mod operators;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use baselines::{admm_bp, dip_solve, AdmmBpConfig, AdmmResult, DipConfig, SparseBasis};
pub use denoiser::{DenoiserConfig, Head, NormKind, UNet};
pub use engine::{sdi_solve, AdamState, NoiseMode, RunTrace, SdiConfig, StepRecord};
pub use error::{Error, Result};
pub use operators::{adjoint_test, LinearMap, Operator};
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use schedule::{make_schedule, NoiseSchedule};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Operator64 = Operator<f64>;
pub type Operator32 = Operator<f32>;
pub type UNet64 = UNet<f64>;
pub type UNet32 = UNet<f32>;
pub type Graph64<'a> = Graph<'a, f64>;
pub type RunTrace64 = RunTrace<f64>;
