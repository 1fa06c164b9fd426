//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every node stores its forward
//! value and the op that produced it; inputs always precede their consumers, so
//! the insertion order is a topological order and [`Graph::backward`] is a
//! single reverse sweep that visits each node once. Contributions at fan-out
//! points are summed into the same gradient slot, always in the same order.
//!
//! Tensors carry an explicit channel axis and a batch size of one: 1D signals
//! are `[C, L]`, images `[C, H, W]`.

pub mod conv;
pub mod fft;
mod gradcheck;

pub use conv::ConvGeom;
pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::operators::LinearMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a, S> {
    Constant,
    Param,
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<S>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat {
        inputs: Vec<Var>,
    },
    LeakyRelu {
        input: Var,
        slope: S,
    },
    Sigmoid {
        input: Var,
    },
    InstanceNorm {
        input: Var,
        gain: Var,
        offset: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sum(Var),
    Mean(Var),
    NormSq(Var),
    Magnitude {
        input: Var,
    },
    Diff {
        input: Var,
        axis: usize,
    },
    Fft {
        input: Var,
        ndim: usize,
        inverse: bool,
    },
    Rfft {
        input: Var,
        ndim: usize,
    },
    Irfft {
        input: Var,
        ndim: usize,
    },
    Linear {
        input: Var,
        op: &'a dyn LinearMap<S>,
    },
    Reshape {
        input: Var,
    },
}

struct Node<'a, S> {
    value: Tensor<S>,
    op: Op<'a, S>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the parameter leaves.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var) -> Option<&Tensor<S>> {
        self.slots.get(var.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<S>> {
        self.slots.get_mut(var.0).and_then(|s| s.take())
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Graph<'a, S> {
    nodes: Vec<Node<'a, S>>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, grad: Tensor<S>) {
    match slot {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a = *a + b;
            }
        }
        None => *slot = Some(grad),
    }
}

fn spatial_view(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [c, l] => Some((*c, 1, *l)),
        [c, h, w] => Some((*c, *h, *w)),
        _ => None,
    }
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor<S>, kind: Op<'a, S>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(op)?;
        let requires_grad = matches!(kind, Op::Param) || inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Result<Var> {
        self.push("param", value, Op::Param, &[])
    }

    /// Leaf that is skipped by the backward pass.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.push("constant", value, Op::Constant, &[])
    }

    /// Zero-padded convolution (cross-correlation, as in CNN layers).
    pub fn conv(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::infer(self.shape(input), self.shape(weight), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(Error::shape("conv bias", self.shape(b), &[geom.c_out]));
            }
        }
        let (out, cols) = conv::forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = if self.shape(input).len() == 2 {
            vec![geom.c_out, geom.ow]
        } else {
            vec![geom.c_out, geom.oh, geom.ow]
        };
        let value = Tensor::new(&shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            "conv",
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            &inputs,
        )
    }

    /// Nearest-neighbour upsampling of every spatial axis by `factor`.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (c, h, w) = spatial_view(&shape).ok_or_else(|| Error::invalid(format!("upsample: unsupported shape {shape:?}")))?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let fh = if shape.len() == 2 { 1 } else { factor };
        let (oh, ow) = (h * fh, w * factor);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                let row = &x[(ch * h + i / fh) * w..][..w];
                for j in 0..ow {
                    out.push(row[j / factor]);
                }
            }
        }
        let out_shape = if shape.len() == 2 { vec![c, ow] } else { vec![c, oh, ow] };
        let value = Tensor::new(&out_shape, out)?;
        self.push("upsample", value, Op::Upsample { input, factor }, &[input])
    }

    /// Concatenate along the leading (channel) axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let s = self.shape(v);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            channels += s[0];
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(&shape, data)?;
        self.push("concat", value, Op::Concat { inputs: inputs.to_vec() }, inputs)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        let slope = S::lit(slope);
        let value = self.value(input).map(|v| if v > S::zero() { v } else { v * slope });
        self.push("leaky_relu", value, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| S::one() / (S::one() + (-v).exp()));
        self.push("sigmoid", value, Op::Sigmoid { input }, &[input])
    }

    /// Per-channel normalization over the spatial axes with learnable gain and
    /// offset (`[C]` each). Statistics come from the current input only.
    pub fn instance_norm(&mut self, input: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid(format!("instance_norm: expected [C, ..], got {shape:?}")));
        }
        let c = shape[0];
        for v in [gain, offset] {
            if self.shape(v) != [c] {
                return Err(Error::shape("instance_norm", &shape, self.shape(v)));
            }
        }
        let n = self.value(input).len() / c;
        let nn = S::lit(n as f64);
        let eps = S::lit(eps);
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let b = self.value(offset).data();
        let mut xhat = vec![S::zero(); x.len()];
        let mut out = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); c];
        for ch in 0..c {
            let xs = &x[ch * n..(ch + 1) * n];
            let mean = xs.iter().copied().sum::<S>() / nn;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nn;
            let is = S::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                let h = (xs[i] - mean) * is;
                xhat[ch * n + i] = h;
                out[ch * n + i] = g[ch] * h + b[ch];
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            "instance_norm",
            value,
            Op::InstanceNorm {
                input,
                gain,
                offset,
                xhat,
                inv_std,
            },
            &[input, gain, offset],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = S::lit(c);
        let value = self.value(a).scale(c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).mean());
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// `‖a‖²` as a scalar.
    pub fn norm_sq(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).norm_sq());
        self.push("norm_sq", value, Op::NormSq(a), &[a])
    }

    /// Smoothed magnitude across the leading axis: input `[G, ..rest]`,
    /// output `[..rest]` with `sqrt(Σ_g x_g² + eps²)`. On a planar complex
    /// tensor this is the smoothed complex modulus.
    pub fn magnitude(&mut self, input: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.is_empty() {
            return Err(Error::invalid("magnitude of a scalar"));
        }
        let groups = shape[0];
        let n = self.value(input).len() / groups.max(1);
        let x = self.value(input).data();
        let eps2 = S::lit(eps * eps);
        let out: Vec<S> = (0..n)
            .map(|i| ((0..groups).map(|g| x[g * n + i] * x[g * n + i]).sum::<S>() + eps2).sqrt())
            .collect();
        let value = Tensor::new(&shape[1..], out)?;
        self.push("magnitude", value, Op::Magnitude { input }, &[input])
    }

    /// Forward difference along `axis`; the last slice along the axis is zero.
    pub fn diff(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("diff: axis {axis} out of range for {shape:?}")));
        }
        let out = diff_forward(self.value(input).data(), &shape, axis);
        let value = Tensor::new(&shape, out)?;
        self.push("diff", value, Op::Diff { input, axis }, &[input])
    }

    /// Orthonormal complex FFT over the trailing `ndim` logical axes.
    pub fn fft(&mut self, input: Var, ndim: usize, inverse: bool) -> Result<Var> {
        let value = fft::fft(self.value(input), ndim, inverse)?;
        self.push("fft", value, Op::Fft { input, ndim, inverse }, &[input])
    }

    pub fn rfft(&mut self, input: Var, ndim: usize) -> Result<Var> {
        let value = fft::rfft(self.value(input), ndim)?;
        self.push("rfft", value, Op::Rfft { input, ndim }, &[input])
    }

    pub fn irfft(&mut self, input: Var, ndim: usize) -> Result<Var> {
        let value = fft::irfft(self.value(input), ndim)?;
        self.push("irfft", value, Op::Irfft { input, ndim }, &[input])
    }

    /// Apply a linear operator; its adjoint is used for the backward pass.
    pub fn linear(&mut self, input: Var, op: &'a dyn LinearMap<S>) -> Result<Var> {
        let value = op.apply(self.value(input))?;
        self.push("linear", value, Op::Linear { input, op }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input }, &[input])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut slots: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::full(loss_shape, S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = slots[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, grad, &mut slots, &mut out[idx])?;
        }
        Ok(Gradients { slots: out })
    }

    fn propagate(
        &self,
        node: &Node<'a, S>,
        grad: Tensor<S>,
        slots: &mut [Option<Tensor<S>>],
        param_slot: &mut Option<Tensor<S>>,
    ) -> Result<()> {
        let mut send = |v: Var, t: Tensor<S>| {
            if self.requires_grad(v) {
                accumulate(&mut slots[v.0], t);
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param => *param_slot = Some(grad),
            Op::Conv {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let g = grad.data();
                if self.requires_grad(*weight) {
                    let dw = conv::weight_grad(g, cols, geom);
                    send(*weight, Tensor::new(self.shape(*weight), dw)?);
                }
                if let Some(b) = bias {
                    if self.requires_grad(*b) {
                        send(*b, Tensor::new(&[geom.c_out], conv::bias_grad(g, geom))?);
                    }
                }
                if self.requires_grad(*input) {
                    let dx = conv::input_grad(g, self.value(*weight).data(), geom);
                    send(*input, Tensor::new(self.shape(*input), dx)?);
                }
            }
            Op::Upsample { input, factor } => {
                let in_shape = self.shape(*input);
                let (c, h, w) = spatial_view(in_shape).expect("checked in forward");
                let fh = if in_shape.len() == 2 { 1 } else { *factor };
                let (oh, ow) = (h * fh, w * factor);
                let g = grad.data();
                let mut dx = vec![S::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        let row = &mut dx[(ch * h + i / fh) * w..][..w];
                        let grow = &g[(ch * oh + i) * ow..][..ow];
                        for (j, &gv) in grow.iter().enumerate() {
                            row[j / factor] = row[j / factor] + gv;
                        }
                    }
                }
                send(*input, Tensor::new(in_shape, dx)?);
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.value(v).len();
                    let part = grad.data()[offset..offset + n].to_vec();
                    offset += n;
                    send(v, Tensor::new(self.shape(v), part)?);
                }
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = grad
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| if v > S::zero() { g } else { g * *slope })
                    .collect();
                send(*input, Tensor::new(self.shape(*input), dx)?);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let dx = grad.data().iter().zip(y).map(|(&g, &s)| g * s * (S::one() - s)).collect();
                send(*input, Tensor::new(self.shape(*input), dx)?);
            }
            Op::InstanceNorm {
                input,
                gain,
                offset,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let nn = S::lit(n as f64);
                let g = grad.data();
                let gamma = self.value(*gain).data();
                let mut dgain = vec![S::zero(); c];
                let mut doffset = vec![S::zero(); c];
                let mut dx = vec![S::zero(); xhat.len()];
                for ch in 0..c {
                    let gs = &g[ch * n..(ch + 1) * n];
                    let hs = &xhat[ch * n..(ch + 1) * n];
                    let sum_g: S = gs.iter().copied().sum();
                    let sum_gh: S = gs.iter().zip(hs).map(|(&a, &b)| a * b).sum();
                    dgain[ch] = sum_gh;
                    doffset[ch] = sum_g;
                    let k = gamma[ch] * inv_std[ch] / nn;
                    for i in 0..n {
                        dx[ch * n + i] = k * (nn * gs[i] - sum_g - hs[i] * sum_gh);
                    }
                }
                send(*gain, Tensor::new(&[c], dgain)?);
                send(*offset, Tensor::new(&[c], doffset)?);
                send(*input, Tensor::new(self.shape(*input), dx)?);
            }
            Op::Add(a, b) => {
                send(*b, grad.clone());
                send(*a, grad);
            }
            Op::Sub(a, b) => {
                send(*b, grad.scale(-S::one()));
                send(*a, grad);
            }
            Op::Mul(a, b) => {
                send(*a, grad.mul(self.value(*b))?);
                send(*b, grad.mul(self.value(*a))?);
            }
            Op::Scale(a, c) => send(*a, grad.scale(*c)),
            Op::Sum(a) => send(*a, Tensor::full(self.shape(*a), grad.item())),
            Op::Mean(a) => {
                let n = S::lit(self.value(*a).len() as f64);
                send(*a, Tensor::full(self.shape(*a), grad.item() / n));
            }
            Op::NormSq(a) => {
                let k = grad.item() + grad.item();
                send(*a, self.value(*a).scale(k));
            }
            Op::Magnitude { input } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let g = grad.data();
                let n = y.len();
                let dx = (0..x.len()).map(|i| g[i % n] * x[i] / y[i % n]).collect();
                send(*input, Tensor::new(self.shape(*input), dx)?);
            }
            Op::Diff { input, axis } => {
                let dx = diff_adjoint(grad.data(), self.shape(*input), *axis);
                send(*input, Tensor::new(self.shape(*input), dx)?);
            }
            Op::Fft { input, ndim, inverse } => send(*input, fft::fft(&grad, *ndim, !*inverse)?),
            Op::Rfft { input, ndim } => send(*input, fft::irfft(&grad, *ndim)?),
            Op::Irfft { input, ndim } => send(*input, fft::rfft(&grad, *ndim)?),
            Op::Linear { input, op } => send(*input, op.adjoint(&grad)?),
            Op::Reshape { input } => send(*input, grad.reshape(self.shape(*input))?),
        }
        Ok(())
    }
}

fn diff_forward<S: Scalar>(x: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![S::zero(); x.len()];
    for o in 0..outer {
        for j in 0..len.saturating_sub(1) {
            let base = (o * len + j) * inner;
            for i in 0..inner {
                out[base + i] = x[base + inner + i] - x[base + i];
            }
        }
    }
    out
}

fn diff_adjoint<S: Scalar>(g: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = vec![S::zero(); g.len()];
    for o in 0..outer {
        for j in 0..len.saturating_sub(1) {
            let base = (o * len + j) * inner;
            for i in 0..inner {
                dx[base + i] = dx[base + i] - g[base + i];
                dx[base + inner + i] = dx[base + inner + i] + g[base + i];
            }
        }
    }
    dx
}
