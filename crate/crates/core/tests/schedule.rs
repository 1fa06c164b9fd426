use proptest::prelude::*;
use selfdiff::{make_schedule, NoiseSchedule};

fn beta() -> impl Strategy<Value = f64> {
    1e-6f64..0.2
}

proptest! {
    #[test]
    fn alpha_bar_decreases_and_sigma_increases(steps in 2usize..200, bs in beta(), be in beta(), rev in any::<bool>()) {
        let s = NoiseSchedule::new(steps, bs, be, rev).unwrap();
        for t in 1..steps {
            prop_assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            // σ saturates at 1 in floating point for long, steep schedules.
            prop_assert!(s.sigma[t] >= s.sigma[t - 1]);
        }
        for (_, b, a, sg) in s.rows() {
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(a > 0.0 && a < 1.0);
            prop_assert!((sg * sg + a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn betas_are_linear_between_the_endpoints(steps in 2usize..100, bs in beta(), be in beta()) {
        let s = make_schedule(steps, bs, be).unwrap();
        prop_assert!((s.beta[0] - be).abs() < 1e-15);
        prop_assert!((s.beta[steps - 1] - bs).abs() < 1e-15);
        for t in 1..steps - 1 {
            let mid = 0.5 * (s.beta[t - 1] + s.beta[t + 1]);
            prop_assert!((s.beta[t] - mid).abs() < 1e-14);
        }
        // Monotone in the direction of the endpoints.
        for t in 1..steps {
            prop_assert!((s.beta[t] - s.beta[t - 1]) * (bs - be) >= 0.0);
        }
    }

    #[test]
    fn reverse_swaps_the_endpoints(steps in 2usize..100, bs in beta(), be in beta()) {
        let fwd = make_schedule(steps, bs, be).unwrap();
        let rev = NoiseSchedule::new(steps, bs, be, true).unwrap();
        for t in 0..steps {
            prop_assert!((rev.beta[t] - fwd.beta[steps - 1 - t]).abs() < 1e-15);
        }
    }
}

#[test]
fn rejects_out_of_range_betas() {
    assert!(make_schedule(10, 0.0, 0.1).is_err());
    assert!(make_schedule(10, 0.1, 1.0).is_err());
    assert!(make_schedule(10, f64::NAN, 0.1).is_err());
    assert!(make_schedule(0, 0.1, 0.1).is_err());
}
