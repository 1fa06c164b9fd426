//! Reverse-mode gradients against central finite differences, per op and
//! through the full U-Net.

use proptest::prelude::*;
use selfdiff::autodiff::grad_check;
use selfdiff::engine::{freq_l1_penalty, tv_penalty};
use selfdiff::{DenoiserConfig, Graph, LinearMap, Operator, Rng, Tensor, UNet, Var};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut Rng::new(seed))
}

/// Random tensor with entries kept away from zero, for ops with a kink there.
fn randn_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// `Σ out ⊙ r` for a fixed random `r`: a scalar loss touching every output.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> selfdiff::Result<Var> {
    let r = g.constant(randn(g.shape(out), seed ^ 0x9e37))?;
    let m = g.mul(out, r)?;
    g.sum(m)
}

fn check<F>(params: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<'static, f64>, &[Var]) -> selfdiff::Result<Var>,
{
    grad_check(params, build, STEP, 400, 1).unwrap().max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv1d(seed in 0u64..1000, c_in in 1usize..4, c_out in 1usize..4, stride in 1usize..3) {
        let x = randn(&[c_in, 12], seed);
        let w = randn(&[c_out, c_in, 3], seed + 1);
        let b = randn(&[c_out], seed + 2);
        let err = check(&[x, w, b], |g, p| {
            let y = g.conv(p[0], p[1], Some(p[2]), stride, 1)?;
            project(g, y, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn conv2d(seed in 0u64..1000, stride in 1usize..3, k in prop::sample::select(vec![1usize, 3, 5])) {
        let x = randn(&[2, 8, 8], seed);
        let w = randn(&[3, 2, k, k], seed + 1);
        let err = check(&[x, w], |g, p| {
            let y = g.conv(p[0], p[1], None, stride, k / 2)?;
            project(g, y, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn upsample_concat(seed in 0u64..1000) {
        let a = randn(&[2, 4, 4], seed);
        let b = randn(&[1, 8, 8], seed + 1);
        let err = check(&[a, b], |g, p| {
            let u = g.upsample(p[0], 2)?;
            let c = g.concat(&[u, p[1]])?;
            project(g, c, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn activations(seed in 0u64..1000, slope in 0.0f64..0.5) {
        let x = randn_off_zero(&[3, 10], seed);
        let err = check(&[x], |g, p| {
            let a = g.leaky_relu(p[0], slope)?;
            let s = g.sigmoid(a)?;
            project(g, s, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn instance_norm(seed in 0u64..1000) {
        let x = randn(&[3, 6, 5], seed);
        let gain = randn(&[3], seed + 1);
        let offset = randn(&[3], seed + 2);
        let err = check(&[x, gain, offset], |g, p| {
            let y = g.instance_norm(p[0], p[1], p[2], 1e-5)?;
            project(g, y, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn elementwise_and_reductions(seed in 0u64..1000, c in -3.0f64..3.0) {
        let a = randn(&[4, 5], seed);
        let b = randn(&[4, 5], seed + 1);
        let err = check(&[a, b], |g, p| {
            let s = g.add(p[0], p[1])?;
            let d = g.sub(s, p[1])?;
            let m = g.mul(d, p[1])?;
            let k = g.scale(m, c)?;
            let n = g.norm_sq(k)?;
            let mu = g.mean(p[0])?;
            let mm = g.mul(mu, n)?;
            g.sum(mm)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn magnitude_diff_reshape(seed in 0u64..1000) {
        let x = randn(&[2, 4, 6], seed);
        let err = check(&[x], |g, p| {
            let d = g.diff(p[0], 2)?;
            let r = g.reshape(d, &[2, 24])?;
            let m = g.magnitude(r, 1e-8)?;
            project(g, m, seed)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn transforms(seed in 0u64..1000, inverse in any::<bool>()) {
        let z = randn(&[2, 4, 6], seed);
        let x = randn(&[1, 5, 4], seed + 1);
        let err = check(&[z, x], |g, p| {
            let f = g.fft(p[0], 2, inverse)?;
            let r = g.rfft(p[1], 2)?;
            let back = g.irfft(r, 2)?;
            let a = project(g, f, seed)?;
            let b = project(g, r, seed + 3)?;
            let c = project(g, back, seed + 4)?;
            let ab = g.add(a, b)?;
            g.add(ab, c)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn penalties(seed in 0u64..1000) {
        let x = randn(&[1, 6, 6], seed);
        let z = randn(&[2, 6, 6], seed + 1);
        let err = check(&[x, z], |g, p| {
            let tv = tv_penalty(g, p[0])?;
            let fr = freq_l1_penalty(g, p[0], false)?;
            let fc = freq_l1_penalty(g, p[1], true)?;
            let a = g.add(tv, fr)?;
            g.add(a, fc)
        });
        prop_assert!(err < TOL, "{err}");
    }
}

#[test]
fn linear_operator_node() {
    let op: &'static Operator<f64> = Box::leak(Box::new(Operator::gaussian_cs(5, 9, 3).unwrap()));
    let x = randn(&[1, 9], 4);
    let y = randn(&[5], 5);
    let err = check(&[x], |g, p| {
        let a = g.linear(p[0], op)?;
        let yv = g.constant(y.clone())?;
        let r = g.sub(a, yv)?;
        g.norm_sq(r)
    });
    assert!(err < TOL, "{err}");
}

fn full_net_check(cfg: DenoiserConfig, op: Operator<f64>, seed: u64) -> f64 {
    let net = UNet::<f64>::new(cfg).unwrap();
    let x = randn(&net.config().input_shape(), seed);
    let y = randn(op.range_shape(), seed + 1);
    let op: &'static Operator<f64> = Box::leak(Box::new(op));
    grad_check(
        net.params(),
        |g, p| {
            let xv = g.constant(x.clone())?;
            let d = net.forward(g, p, xv)?;
            let a = g.linear(d, op)?;
            let yv = g.constant(y.clone())?;
            let r = g.sub(a, yv)?;
            let fid = g.norm_sq(r)?;
            let tv = tv_penalty(g, d)?;
            let tvw = g.scale(tv, 1e-2)?;
            g.add(fid, tvw)
        },
        STEP,
        300,
        seed,
    )
    .unwrap()
    .max_rel_error
}

#[test]
fn full_unet_1d_data_loss() {
    let cfg = DenoiserConfig {
        base_channels: 4,
        depth: 2,
        seed: 11,
        init_std: 0.3,
        ..DenoiserConfig::one_d(16)
    };
    let err = full_net_check(cfg, Operator::gaussian_cs(7, 16, 2).unwrap(), 5);
    assert!(err < TOL, "{err}");
}

#[test]
fn full_unet_2d_with_sigmoid_head() {
    let cfg = DenoiserConfig {
        base_channels: 3,
        depth: 2,
        seed: 12,
        init_std: 0.3,
        head: selfdiff::Head::Sigmoid,
        ..DenoiserConfig::two_d(8, 8, 1)
    };
    let err = full_net_check(cfg, Operator::avgpool(2, &[1, 8, 8]).unwrap(), 6);
    assert!(err < TOL, "{err}");
}
