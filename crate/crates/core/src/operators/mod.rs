//! Linear forward models `A` with matched adjoints `A^H`.
//!
//! Adjoints are taken with respect to the real inner product `Σ xᵢ yᵢ` of the
//! stored buffers; for planar complex tensors this equals `Re⟨x, y⟩`.

mod generators;

pub use generators::{equispaced_columns, motion_kernel, random_pattern, rect_mask, MaskCoverage};

use serde::{Deserialize, Serialize};

use crate::autodiff::fft;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub trait LinearMap<S: Scalar> {
    fn domain_shape(&self) -> &[usize];
    fn range_shape(&self) -> &[usize];
    fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>>;
    fn adjoint(&self, y: &Tensor<S>) -> Result<Tensor<S>>;

    /// True when the domain holds planar complex values `[2, ..]`.
    fn complex_domain(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Identity,
    GaussianCs,
    Mask,
    Blur,
    AvgPool,
    MaskedFourier,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Zero,
    Circular,
}

#[derive(Clone, Debug)]
enum Payload<S> {
    Identity,
    Matrix { rows: usize, cols: usize, data: Vec<S> },
    Mask(Tensor<S>),
    Blur { kernel: Tensor<S>, boundary: Boundary },
    AvgPool { factor: usize },
    MaskedFourier { pattern: Tensor<S> },
}

#[derive(Clone, Debug)]
pub struct Operator<S> {
    payload: Payload<S>,
    domain: Vec<usize>,
    range: Vec<usize>,
    seed: Option<u64>,
}

fn ensure_binary<S: Scalar>(what: &str, t: &Tensor<S>) -> Result<()> {
    if t.data().iter().all(|&v| v == S::zero() || v == S::one()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must contain only 0 and 1")))
    }
}

impl<S: Scalar> Operator<S> {
    pub fn identity(shape: &[usize]) -> Self {
        Operator {
            payload: Payload::Identity,
            domain: shape.to_vec(),
            range: shape.to_vec(),
            seed: None,
        }
    }

    /// Dense `m×n` i.i.d. Gaussian matrix scaled to unit Frobenius norm.
    /// Domain `[1, n]`, range `[m]`.
    pub fn gaussian_cs(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::invalid(format!(
                "compressed sensing needs 0 < m <= n, got m={m}, n={n}"
            )));
        }
        let mut rng = Rng::new(seed);
        let raw: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
        let fro = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let data = raw.iter().map(|v| S::lit(v / fro)).collect();
        let mut op = Self::dense(m, n, data)?;
        op.seed = Some(seed);
        Ok(op)
    }

    /// Dense `rows×cols` row-major matrix acting on `[1, cols]`.
    pub fn dense(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Operator {
            payload: Payload::Matrix { rows, cols, data },
            domain: vec![1, cols],
            range: vec![rows],
            seed: None,
        })
    }

    /// Elementwise binary mask; self-adjoint.
    pub fn inpaint_mask(mask: Tensor<S>) -> Result<Self> {
        ensure_binary("inpainting mask", &mask)?;
        let shape = mask.shape().to_vec();
        Ok(Operator {
            payload: Payload::Mask(mask),
            domain: shape.clone(),
            range: shape,
            seed: None,
        })
    }

    /// Same-size 2D convolution of `[C, H, W]` (or `[C, L]` with a 1-row
    /// kernel) images with a normalized odd-sized kernel.
    pub fn blur(kernel: Tensor<S>, image_shape: &[usize], boundary: Boundary) -> Result<Self> {
        let kernel = match kernel.shape() {
            [k] => {
                let k = *k;
                kernel.reshape(&[1, k])?
            }
            [_, _] => kernel,
            s => return Err(Error::invalid(format!("blur kernel must be 1D or 2D, got {s:?}"))),
        };
        let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!("blur kernel sides must be odd, got {kh}x{kw}")));
        }
        let total = kernel.sum().f64();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("blur kernel must sum to 1, sums to {total}")));
        }
        if !(2..=3).contains(&image_shape.len()) {
            return Err(Error::invalid(format!("blur expects [C, L] or [C, H, W], got {image_shape:?}")));
        }
        Ok(Operator {
            payload: Payload::Blur { kernel, boundary },
            domain: image_shape.to_vec(),
            range: image_shape.to_vec(),
            seed: None,
        })
    }

    /// Block mean over `factor×factor` cells of a `[C, H, W]` image.
    pub fn avgpool(factor: usize, image_shape: &[usize]) -> Result<Self> {
        let [c, h, w] = image_shape else {
            return Err(Error::invalid(format!("avgpool expects [C, H, W], got {image_shape:?}")));
        };
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "image {h}x{w} is not divisible by pooling factor {factor}"
            )));
        }
        Ok(Operator {
            payload: Payload::AvgPool { factor },
            domain: image_shape.to_vec(),
            range: vec![*c, h / factor, w / factor],
            seed: None,
        })
    }

    /// Orthonormal 2D FFT followed by a binary sampling `pattern` `[H, W]`.
    /// Acts on planar complex images `[2, H, W]`.
    pub fn masked_fourier(pattern: Tensor<S>) -> Result<Self> {
        let [h, w] = pattern.shape() else {
            return Err(Error::invalid(format!("sampling pattern must be [H, W], got {:?}", pattern.shape())));
        };
        ensure_binary("sampling pattern", &pattern)?;
        let shape = vec![2, *h, *w];
        Ok(Operator {
            payload: Payload::MaskedFourier { pattern },
            domain: shape.clone(),
            range: shape,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn kind(&self) -> OperatorKind {
        match self.payload {
            Payload::Identity => OperatorKind::Identity,
            Payload::Matrix { .. } => OperatorKind::GaussianCs,
            Payload::Mask(_) => OperatorKind::Mask,
            Payload::Blur { .. } => OperatorKind::Blur,
            Payload::AvgPool { .. } => OperatorKind::AvgPool,
            Payload::MaskedFourier { .. } => OperatorKind::MaskedFourier,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Row-major matrix payload of dense operators.
    pub fn matrix(&self) -> Option<(usize, usize, &[S])> {
        match &self.payload {
            Payload::Matrix { rows, cols, data } => Some((*rows, *cols, data)),
            _ => None,
        }
    }

    fn check(&self, which: &'static str, x: &Tensor<S>, shape: &[usize]) -> Result<()> {
        x.ensure_shape(which, shape)
    }
}

fn blur_apply<S: Scalar>(x: &Tensor<S>, kernel: &Tensor<S>, boundary: Boundary, adjoint: bool) -> Tensor<S> {
    let shape = x.shape();
    let (c, h, w) = match shape {
        [c, l] => (*c, 1, *l),
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!("validated at construction"),
    };
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let src = x.data();
    let mut out = vec![S::zero(); src.len()];
    // convolution: out[i] = Σ k[a] x[i + r - a]; adjoint: out[i] = Σ k[a] x[i - r + a]
    let sign: isize = if adjoint { -1 } else { 1 };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for a in 0..kh {
            let di = sign * (rh - a as isize);
            for b in 0..kw {
                let kv = k[a * kw + b];
                if kv == S::zero() {
                    continue;
                }
                let dj = sign * (rw - b as isize);
                for i in 0..h {
                    let mut si = i as isize + di;
                    match boundary {
                        Boundary::Zero if si < 0 || si >= h as isize => continue,
                        Boundary::Circular => si = si.rem_euclid(h as isize),
                        _ => {}
                    }
                    let srow = &plane[si as usize * w..][..w];
                    let drow = &mut dst[i * w..][..w];
                    match boundary {
                        Boundary::Zero => {
                            let lo = (-dj).max(0) as usize;
                            let hi = (w as isize - dj).min(w as isize).max(0) as usize;
                            for j in lo..hi.max(lo) {
                                drow[j] = drow[j] + kv * srow[(j as isize + dj) as usize];
                            }
                        }
                        Boundary::Circular => {
                            for (j, d) in drow.iter_mut().enumerate() {
                                let sj = (j as isize + dj).rem_euclid(w as isize) as usize;
                                *d = *d + kv * srow[sj];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(shape, out).expect("shape preserved")
}

impl<S: Scalar> LinearMap<S> for Operator<S> {
    fn domain_shape(&self) -> &[usize] {
        &self.domain
    }

    fn range_shape(&self) -> &[usize] {
        &self.range
    }

    fn complex_domain(&self) -> bool {
        matches!(self.payload, Payload::MaskedFourier { .. })
    }

    fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check("operator apply", x, &self.domain)?;
        match &self.payload {
            Payload::Identity => Ok(x.clone()),
            Payload::Matrix { rows, cols, data } => {
                let mut out = vec![S::zero(); *rows];
                S::gemm(*rows, *cols, 1, data, false, x.data(), false, &mut out, false);
                Tensor::new(&self.range, out)
            }
            Payload::Mask(mask) => x.mul(mask),
            Payload::Blur { kernel, boundary } => Ok(blur_apply(x, kernel, *boundary, false)),
            Payload::AvgPool { factor } => {
                let (c, h, w) = (self.domain[0], self.domain[1], self.domain[2]);
                let (oh, ow) = (h / factor, w / factor);
                let inv = S::lit(1.0 / (factor * factor) as f64);
                let src = x.data();
                let mut out = vec![S::zero(); c * oh * ow];
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let o = (ch * oh + i / factor) * ow + j / factor;
                            out[o] = out[o] + src[(ch * h + i) * w + j];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v = *v * inv);
                Tensor::new(&self.range, out)
            }
            Payload::MaskedFourier { pattern } => {
                let mut k = fft::fft(x, 2, false)?;
                apply_pattern(&mut k, pattern);
                Ok(k)
            }
        }
    }

    fn adjoint(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        self.check("operator adjoint", y, &self.range)?;
        match &self.payload {
            Payload::Identity => Ok(y.clone()),
            Payload::Matrix { rows, cols, data } => {
                let mut out = vec![S::zero(); *cols];
                S::gemm(*cols, *rows, 1, data, true, y.data(), false, &mut out, false);
                Tensor::new(&self.domain, out)
            }
            Payload::Mask(mask) => y.mul(mask),
            Payload::Blur { kernel, boundary } => Ok(blur_apply(y, kernel, *boundary, true)),
            Payload::AvgPool { factor } => {
                let (c, h, w) = (self.domain[0], self.domain[1], self.domain[2]);
                let (oh, ow) = (h / factor, w / factor);
                let inv = S::lit(1.0 / (factor * factor) as f64);
                let src = y.data();
                let out = (0..c * h * w)
                    .map(|idx| {
                        let (ch, rem) = (idx / (h * w), idx % (h * w));
                        let (i, j) = (rem / w, rem % w);
                        src[(ch * oh + i / factor) * ow + j / factor] * inv
                    })
                    .collect();
                Tensor::new(&self.domain, out)
            }
            Payload::MaskedFourier { pattern } => {
                let mut k = y.clone();
                apply_pattern(&mut k, pattern);
                fft::fft(&k, 2, true)
            }
        }
    }
}

fn apply_pattern<S: Scalar>(planar: &mut Tensor<S>, pattern: &Tensor<S>) {
    let n = pattern.len();
    let p = pattern.data();
    for (i, v) in planar.data_mut().iter_mut().enumerate() {
        *v = *v * p[i % n];
    }
}

/// Max over random probe pairs of `|⟨Ax, y⟩ - ⟨x, A^H y⟩| / (‖Ax‖‖y‖ + 1e-30)`.
pub fn adjoint_test<S: Scalar>(op: &dyn LinearMap<S>, seed: u64, probes: usize) -> Result<f64> {
    if probes == 0 {
        return Err(Error::invalid("adjoint test needs at least one probe"));
    }
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = Tensor::<S>::randn(op.domain_shape(), &mut rng);
        let y = Tensor::<S>::randn(op.range_shape(), &mut rng);
        let ax = op.apply(&x)?;
        let aty = op.adjoint(&y)?;
        let lhs = ax.dot(&y)?.f64();
        let rhs = x.dot(&aty)?.f64();
        let denom = ax.norm().f64() * y.norm().f64() + 1e-30;
        worst = worst.max((lhs - rhs).abs() / denom);
    }
    Ok(worst)
}
