#[path = "probes/sampler.rs"]
mod probes;

use colearn_core::diffusion::{forward_diffuse, NoiseSchedule};
use colearn_core::Tensor;
use probes::*;
use proptest::prelude::*;

#[test]
fn coefficients_sum_to_one_over_random_schedules() {
    let (err, first_exact) = coefficient_sum_error(100, 2024);
    assert!(err < 1e-6, "{err}");
    assert!(first_exact);
}

#[test]
fn oracle_chain_recovers_x0() {
    let (err, calls_ok) = oracle_chain_error(20, 7);
    assert!(err < 1e-4, "max abs error {err}");
    assert!(calls_ok);
}

#[test]
fn last_step_returns_prediction_exactly() {
    assert!(last_step_is_exact());
}

#[test]
fn reverse_step_preserves_forward_marginal() {
    let (mean_err, var_err) = marginal_errors(10_000);
    assert!(mean_err <= 0.02, "relative mean error {mean_err}");
    assert!(var_err <= 0.05, "relative variance error {var_err}");
}

proptest! {
    #[test]
    fn forward_marginal_interpolates(x in -1.0f32..1.0, y in -1.0f32..1.0, t in 1usize..=15) {
        let s = NoiseSchedule::new(15, 0.001, 0.9999, 1.0, 0.02).unwrap();
        let zero = Tensor::zeros(&[1]);
        let xt = forward_diffuse(&Tensor::full(&[1], x), &Tensor::full(&[1], y), t, &zero, &s).unwrap();
        let eta = s.eta(t) as f32;
        prop_assert!((xt.item() - ((1.0 - eta) * x + eta * y)).abs() < 1e-6);
    }

    #[test]
    fn eta_monotone(steps in 1usize..=64, eta1 in 1e-4f64..0.1, gap in 0.01f64..0.9) {
        let eta_t = (eta1 + gap).min(1.0);
        let s = NoiseSchedule::new(steps, eta1, eta_t, 1.0, 0.02).unwrap();
        prop_assert_eq!(s.eta(0), 0.0);
        for t in 1..=steps {
            prop_assert!(s.eta(t) > s.eta(t - 1));
        }
        prop_assert!((s.eta(steps) - eta_t).abs() < 1e-12);
    }
}
