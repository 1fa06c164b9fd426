//! Task synthesis: ground truth, forward operator and measurements.

use std::f64::consts::PI;

use anyhow::{bail, ensure, Context, Result};
use selfdiff::io::read_tensor;
use selfdiff::operators::{equispaced_columns, motion_kernel, random_pattern, rect_mask, MaskCoverage};
use selfdiff::{LinearMap, Operator, Rng, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ExperimentConfig, PatternKind, TaskKind};

/// Sum of sinusoids `x[t] = Σ A·sin(2π f t / N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    pub n: usize,
    /// `(amplitude, frequency)` pairs; frequencies are integer cycles per signal.
    pub components: Vec<(f64, usize)>,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            n: 128,
            components: vec![(1.0, 1), (0.5, 15), (0.3, 20), (1.0, 6), (0.8, 3), (0.6, 4), (0.7, 5)],
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n > 0, "signal length must be positive");
        for &(a, f) in &self.components {
            ensure!(a.is_finite(), "amplitude {a} is not finite");
            if 2 * f >= self.n {
                bail!("frequency {f} aliases: must be below N/2 = {}", self.n as f64 / 2.0);
            }
        }
        Ok(())
    }

    /// Distinct frequencies with nonzero amplitude, ascending.
    pub fn frequencies(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.components.iter().filter(|c| c.0 != 0.0).map(|c| c.1).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// The signal as a `[1, N]` tensor.
pub fn generate_signal<S: Scalar>(spec: &SignalSpec) -> Result<Tensor<S>> {
    spec.validate()?;
    let n = spec.n as f64;
    Ok(Tensor::from_fn(&[1, spec.n], |t| {
        let v: f64 = spec.components.iter().map(|&(a, f)| a * (2.0 * PI * f as f64 * t as f64 / n).sin()).sum();
        S::lit(v)
    }))
}

fn smoothstep_cover(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

/// Deterministic `[1, size, size]` test image in `[0, 1]`: a shaded background
/// with a faint oriented texture and several anti-aliased disks and boxes.
/// Each `index` gives a different scene.
pub fn procedural_image(index: usize, size: usize) -> Tensor<f64> {
    let mut rng = Rng::new(derive_seed(index as u64, "procedural-image"));
    let s = size as f64;
    let base = 0.2 + 0.4 * rng.uniform();
    let (gx, gy) = (0.6 * rng.uniform() - 0.3, 0.6 * rng.uniform() - 0.3);
    let tex_amp = 0.04 + 0.06 * rng.uniform();
    let tex_freq = 2.0 + 5.0 * rng.uniform();
    let tex_angle = PI * rng.uniform();
    let mut img: Vec<f64> = (0..size * size)
        .map(|i| {
            let (u, v) = ((i % size) as f64 / s, (i / size) as f64 / s);
            let phase = 2.0 * PI * tex_freq * (u * tex_angle.cos() + v * tex_angle.sin());
            base + gx * (u - 0.5) + gy * (v - 0.5) + tex_amp * phase.sin()
        })
        .collect();
    let shapes = 4 + rng.range(0, 5);
    for _ in 0..shapes {
        let level = rng.uniform();
        let (cx, cy) = (s * rng.uniform(), s * rng.uniform());
        let disk = rng.uniform() < 0.5;
        let (rx, ry) = (s * (0.05 + 0.2 * rng.uniform()), s * (0.05 + 0.2 * rng.uniform()));
        for (i, p) in img.iter_mut().enumerate() {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            let d = if disk {
                ((x - cx).hypot(y - cy)) - rx
            } else {
                ((x - cx).abs() - rx).max((y - cy).abs() - ry)
            };
            let c = smoothstep_cover(d);
            *p = *p * (1.0 - c) + level * c;
        }
    }
    let data = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(&[1, size, size], data).expect("shape matches data")
}

/// A synthesized inverse problem.
pub struct Task<S: Scalar> {
    pub kind: TaskKind,
    pub op: Operator<S>,
    pub y: Tensor<S>,
    pub x_true: Tensor<S>,
    pub complex: bool,
    /// Operator payloads and other artifacts by file stem, for the run record.
    pub artifacts: Vec<(String, Tensor<S>)>,
}

fn load_image<S: Scalar>(cfg: &ExperimentConfig) -> Result<Tensor<S>> {
    let size = cfg.image.size;
    if let Some(path) = &cfg.image.path {
        let t: Tensor<S> = read_tensor(path).with_context(|| format!("reading image {}", path.display()))?;
        let t = match t.shape() {
            [h, w] if *h == size && *w == size => t.reshape(&[1, size, size])?,
            [1, h, w] if *h == size && *w == size => t,
            s => bail!("image {} has shape {s:?}, expected {size}x{size}", path.display()),
        };
        return Ok(t);
    }
    match cfg.image.procedural {
        Some(i) => Ok(procedural_image(i, size).cast()),
        None => bail!("task {} needs an input image", cfg.task.name()),
    }
}

fn add_noise<S: Scalar>(y: &mut Tensor<S>, sigma: f64, seed: u64) {
    if sigma > 0.0 {
        let mut rng = Rng::new(seed);
        for v in y.data_mut() {
            *v = *v + S::lit(sigma * rng.normal());
        }
    }
}

/// Build the operator from the config, apply it to the ground truth and add
/// measurement noise. Every random payload is seeded from `cfg.seed`.
pub fn synthesize_task<S: Scalar>(cfg: &ExperimentConfig) -> Result<Task<S>> {
    let p = &cfg.operator;
    let op_seed = derive_seed(cfg.seed, "operator");
    let noise_seed = derive_seed(cfg.seed, "noise");
    let mut artifacts = Vec::new();
    let (op, x_true, complex, noise) = match cfg.task {
        TaskKind::Cs1d => {
            let x = generate_signal::<S>(&cfg.signal)?;
            let op = Operator::gaussian_cs(p.measurements, cfg.signal.n, op_seed)?;
            if let Some((rows, cols, data)) = op.matrix() {
                artifacts.push(("matrix".into(), Tensor::new(&[rows, cols], data.to_vec())?));
            }
            (op, x, false, p.measurement_noise)
        }
        TaskKind::Inpaint => {
            let x = load_image::<S>(cfg)?;
            let size = cfg.image.size;
            let mask = match &p.mask_path {
                Some(path) => {
                    let m: Tensor<S> = read_tensor(path).with_context(|| format!("reading mask {}", path.display()))?;
                    let m = m.map(|v| if v.f64() >= 0.5 { S::one() } else { S::zero() });
                    ensure!(m.len() == size * size, "mask {} must be {size}x{size}", path.display());
                    m.reshape(&[1, size, size])?
                }
                None => rect_mask(
                    size,
                    size,
                    MaskCoverage {
                        min: p.mask_coverage_min,
                        max: p.mask_coverage_max,
                    },
                    op_seed,
                )?,
            };
            artifacts.push(("mask".into(), mask.clone()));
            (Operator::inpaint_mask(mask)?.with_seed(op_seed), x, false, p.measurement_noise)
        }
        TaskKind::Deblur => {
            let x = load_image::<S>(cfg)?;
            let kernel = match &p.kernel_path {
                Some(path) => {
                    let k: Tensor<S> = read_tensor(path).with_context(|| format!("reading kernel {}", path.display()))?;
                    let k = match k.shape() {
                        [1, h, w] => {
                            let (h, w) = (*h, *w);
                            k.reshape(&[h, w])?
                        }
                        _ => k,
                    };
                    let total = k.sum();
                    ensure!(total.f64() > 0.0, "kernel {} has non-positive sum", path.display());
                    k.scale(S::one() / total)
                }
                None => motion_kernel(p.kernel_size, p.motion_length, p.motion_angle)?,
            };
            artifacts.push(("kernel".into(), kernel.clone()));
            let op = Operator::blur(kernel, x.shape(), p.boundary)?;
            (op, x, false, p.measurement_noise)
        }
        TaskKind::Sr => {
            let x = load_image::<S>(cfg)?;
            (Operator::avgpool(p.pool_factor, x.shape())?, x, false, p.measurement_noise)
        }
        TaskKind::Denoise => {
            let x = load_image::<S>(cfg)?;
            (Operator::identity(x.shape()), x, false, p.denoise_sigma)
        }
        TaskKind::Fourier2d => {
            let real = load_image::<S>(cfg)?;
            let size = cfg.image.size;
            let mut planar = real.into_data();
            planar.extend(std::iter::repeat(S::zero()).take(size * size));
            let x = Tensor::new(&[2, size, size], planar)?;
            let pattern = match p.pattern {
                PatternKind::Equispaced => equispaced_columns(size, size, p.accel, p.center_lines)?,
                PatternKind::Random => random_pattern(size, size, p.keep, op_seed)?,
            };
            artifacts.push(("pattern".into(), pattern.clone()));
            (Operator::masked_fourier(pattern)?.with_seed(op_seed), x, true, p.measurement_noise)
        }
    };
    let mut y = op.apply(&x_true)?;
    add_noise(&mut y, noise, noise_seed);
    Ok(Task {
        kind: cfg.task,
        op,
        y,
        x_true,
        complex,
        artifacts,
    })
}

/// Image view of a reconstruction for metrics and PGM output: magnitude for
/// planar complex tensors, identity otherwise.
pub fn display_image<S: Scalar>(x: &Tensor<S>, complex: bool) -> Result<Tensor<S>> {
    if !complex {
        return Ok(x.clone());
    }
    let shape = x.shape();
    ensure!(shape.len() == 3 && shape[0] == 2, "complex image must be [2, H, W], got {shape:?}");
    let half = x.len() / 2;
    let d = x.data();
    Ok(Tensor::new(
        &[1, shape[1], shape[2]],
        (0..half).map(|i| d[i].hypot(d[half + i])).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_period_samples() {
        let spec = SignalSpec {
            n: 4,
            components: vec![(1.0, 1)],
        };
        let x = generate_signal::<f64>(&spec).unwrap();
        let expect = [0.0, 1.0, 0.0, -1.0];
        for (a, b) in x.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_spec_is_zero_and_aliasing_rejected() {
        let x = generate_signal::<f64>(&SignalSpec { n: 16, components: vec![] }).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        let bad = SignalSpec {
            n: 16,
            components: vec![(1.0, 8)],
        };
        assert!(generate_signal::<f64>(&bad).is_err());
    }

    #[test]
    fn procedural_images_differ_and_repeat() {
        let a = procedural_image(0, 64);
        let b = procedural_image(1, 64);
        assert_eq!(a, procedural_image(0, 64));
        assert_ne!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
