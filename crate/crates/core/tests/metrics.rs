use proptest::prelude::*;
use selfdiff::diagnostics::{nrmse, psnr, psnr_capped, ssim};
use selfdiff::{Rng, Tensor};

fn noisy_pair(seed: u64, n: usize, noise: f64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = Rng::new(seed);
    let x = Tensor::from_fn(&[n], |_| rng.uniform());
    let e = Tensor::from_fn(&[n], |_| noise * rng.normal());
    let y = x.add(&e).unwrap();
    (x, y)
}

proptest! {
    #[test]
    fn psnr_and_nrmse_ignore_sample_order(seed in 0u64..1000, n in 4usize..64, shift in 1usize..64) {
        let (x, y) = noisy_pair(seed, n, 0.1);
        let perm = |t: &Tensor<f64>| {
            let d = t.data();
            Tensor::from_fn(&[n], |i| d[(i * 7 + shift) % n])
        };
        // i·7 + shift is a permutation when gcd(7, n) = 1.
        prop_assume!(n % 7 != 0);
        let p1 = psnr(&y, &x, 1.0).unwrap();
        let p2 = psnr(&perm(&y), &perm(&x), 1.0).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
        let e1 = nrmse(&y, &x).unwrap();
        let e2 = nrmse(&perm(&y), &perm(&x)).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise(seed in 0u64..1000) {
        let (x, y1) = noisy_pair(seed, 256, 0.01);
        let mut rng = Rng::new(seed + 1);
        let e = Tensor::from_fn(&[256], |_| 0.1 * rng.normal());
        let y2 = x.add(&e).unwrap();
        prop_assert!(psnr(&y1, &x, 1.0).unwrap() > psnr(&y2, &x, 1.0).unwrap());
    }

    #[test]
    fn ssim_is_bounded_and_symmetric(seed in 0u64..200) {
        let mut rng = Rng::new(seed);
        let a = Tensor::from_fn(&[16, 16], |_| rng.uniform());
        let e = Tensor::from_fn(&[16, 16], |_| 0.2 * rng.normal());
        let b = a.add(&e).unwrap().map(|v| v.clamp(0.0, 1.0));
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        prop_assert!(ab.ssim <= 1.0 + 1e-12 && ab.ssim > -1.0);
        prop_assert!((ab.ssim - ba.ssim).abs() < 1e-12);
    }
}

#[test]
fn psnr_known_value() {
    // Uniform error 0.1 on a unit-peak signal: MSE 1e-2, 20 dB.
    let x = Tensor::<f64>::from_f64(&[4], &[0.0, 1.0, 0.5, 0.25]).unwrap();
    let y = x.map(|v| v + 0.1);
    assert!((psnr(&y, &x, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&x, &x, 1.0).unwrap().is_infinite());
    assert_eq!(psnr_capped(f64::INFINITY), 99.0);
}

#[test]
fn ssim_of_identical_images_is_one() {
    let mut rng = Rng::new(3);
    let a = Tensor::from_fn(&[1, 20, 24], |_| rng.uniform());
    let r = ssim(&a, &a, 1.0).unwrap();
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert!((r.luminance - 1.0).abs() < 1e-12);
    assert!((r.contrast_structure - 1.0).abs() < 1e-12);
    assert!(ssim(&Tensor::<f64>::zeros(&[8, 8]), &Tensor::zeros(&[8, 8]), 1.0).is_err());
}
