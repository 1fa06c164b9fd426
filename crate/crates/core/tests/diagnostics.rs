use selfdiff::diagnostics::{
    drift_alignment, jacobian_frobenius, relative_change, spectral_trace, spectrum_magnitudes, taylor_check,
};
use selfdiff::{DenoiserConfig, LinearMap, Operator, Result, Rng, Tensor, UNet};

/// Explicit `n×n` matrix acting on `[1, n]` tensors.
fn matrix_denoiser(w: Vec<f64>, n: usize) -> impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> {
    move |x: &Tensor<f64>| {
        let d = x.data();
        Ok(Tensor::from_fn(&[1, n], |i| (0..n).map(|j| w[i * n + j] * d[j]).sum()))
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..rows * cols).map(|_| rng.normal()).collect()
}

#[test]
fn hutchinson_matches_explicit_frobenius_norm() {
    let n = 6;
    for seed in 0..4 {
        let w = random_matrix(n, n, seed);
        let d = matrix_denoiser(w.clone(), n);
        let x0 = Tensor::zeros(&[1, n]);

        let id = Operator::identity(&[1, n]);
        let exact: f64 = w.iter().map(|v| v * v).sum();
        let est = jacobian_frobenius(&id, &d, &x0, 4000, seed + 10).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.std_error, "{} vs {exact} ± {}", est.mean, est.std_error);

        let a = Operator::gaussian_cs(4, n, seed + 20).unwrap();
        let (_, _, am) = a.matrix().unwrap();
        let mut aw = 0.0;
        for r in 0..4 {
            for c in 0..n {
                let v: f64 = (0..n).map(|k| am[r * n + k] * w[k * n + c]).sum();
                aw += v * v;
            }
        }
        let est = jacobian_frobenius(&a, &d, &x0, 4000, seed + 30).unwrap();
        assert!((est.mean - aw).abs() < 3.0 * est.std_error, "{} vs {aw} ± {}", est.mean, est.std_error);
    }
}

#[test]
fn hutchinson_needs_enough_probes() {
    let d = matrix_denoiser(vec![1.0], 1);
    let op = Operator::identity(&[1, 1]);
    assert!(jacobian_frobenius(&op, &d, &Tensor::zeros(&[1, 1]), 4, 0).is_err());
}

#[test]
fn taylor_expansion_is_exact_for_a_linear_denoiser() {
    let n = 8;
    let w = random_matrix(n, n, 3);
    let d = matrix_denoiser(w, n);
    let a = Operator::gaussian_cs(5, n, 4).unwrap();
    let x0 = Tensor::randn(&[1, n], &mut Rng::new(5));
    let y = Tensor::randn(&[5], &mut Rng::new(6));
    for sigma in [1e-3, 1e-2, 1e-1, 1.0] {
        let r = taylor_check(&a, &d, &y, &x0, sigma, 256, 7).unwrap();
        assert!(r.gap_in_std_errors() < 3.0, "sigma {sigma}: {r:?}");
    }
}

#[test]
fn taylor_check_on_a_fresh_unet_is_close() {
    let net = UNet::<f64>::new(DenoiserConfig {
        base_channels: 4,
        depth: 2,
        seed: 2,
        ..DenoiserConfig::one_d(32)
    })
    .unwrap();
    let a = Operator::gaussian_cs(10, 32, 8).unwrap();
    let x0 = Tensor::randn(&[1, 32], &mut Rng::new(1));
    let y = a.apply(&Tensor::randn(&[1, 32], &mut Rng::new(2))).unwrap();
    let r = taylor_check(&a, &net, &y, &x0, 1e-3, 64, 3).unwrap();
    assert!(r.relative_gap() < 0.1, "{r:?}");
}

#[test]
fn spectral_trace_and_convergence_step() {
    let n = 16;
    let truth = Tensor::from_fn(&[1, n], |t| (2.0 * std::f64::consts::PI * 2.0 * t as f64 / n as f64).sin());
    // Amplitude ramps 0 → 1 over the steps t = 4..0.
    let steps = vec![4, 3, 2, 1, 0];
    let ests: Vec<Tensor<f64>> = [0.0, 0.5, 0.85, 0.95, 1.0].iter().map(|&a| truth.scale(a)).collect();
    let refs: Vec<&Tensor<f64>> = ests.iter().collect();
    let tr = spectral_trace(&steps, &refs, &truth, false).unwrap();
    assert_eq!(tr.bins(), n);
    // Within 20 % from the amplitude-0.85 estimate (t = 2) on.
    assert_eq!(tr.convergence_step(2, 0.2), Some(2));
    assert_eq!(tr.convergence_step(2, 0.01), Some(0));
    // A bin with no truth energy never converges.
    assert_eq!(tr.convergence_step(5, 0.2), None);
    let mags = spectrum_magnitudes(&truth, false).unwrap();
    assert!((mags[2] - (n as f64 / 4.0).sqrt()).abs() < 1e-12);
}

#[test]
fn drift_points_at_the_truth_for_a_contraction() {
    let truth = Tensor::randn(&[1, 10], &mut Rng::new(1));
    let mut cur = Tensor::randn(&[1, 10], &mut Rng::new(2));
    let mut ests = vec![cur.clone()];
    for _ in 0..5 {
        let mut next = cur.scale(0.5);
        next.axpy(0.5, &truth).unwrap();
        ests.push(next.clone());
        cur = next;
    }
    let refs: Vec<&Tensor<f64>> = ests.iter().collect();
    let align = drift_alignment(&refs, &truth).unwrap();
    assert_eq!(align.len(), 5);
    for a in align {
        assert!((a.unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(drift_alignment(&[&truth, &truth], &truth).unwrap()[0].is_none());
}

#[test]
fn relative_change_definition() {
    let a = Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap();
    let b = Tensor::from_f64(&[2], &[3.0, 3.0]).unwrap();
    assert!((relative_change(&a, &b).unwrap() - 1.0 / 25.0).abs() < 1e-15);
    assert!(relative_change(&Tensor::zeros(&[2]), &b).is_err());
}
