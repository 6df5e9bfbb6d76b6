//! Shared reverse-sampler probes (also used by the CLI acceptance suite).

#![allow(dead_code)]

use colearn_core::diffusion::{forward_diffuse, init_state, reverse_chain, reverse_step, NoiseSchedule};
use colearn_core::{Rng, Tensor};

pub fn random_schedule(rng: &mut Rng) -> NoiseSchedule {
    let steps = rng.int_range(1, 64) as usize;
    let eta1 = rng.uniform_range(1e-4, 0.05);
    let eta_t = rng.uniform_range(eta1 + 0.05, 1.0);
    let kappa = rng.uniform_range(0.1, 4.0);
    let beta_max = rng.uniform_range(1e-3, 0.05);
    NoiseSchedule::new(steps, eta1, eta_t, kappa, beta_max).unwrap()
}

/// Worst |k+m+j−1| over `n` random schedules, and whether every t=1 step is
/// exactly (1, 0, 0).
pub fn coefficient_sum_error(n: usize, seed: u64) -> (f64, bool) {
    let mut rng = Rng::new(seed);
    let (mut worst, mut first_exact) = (0.0f64, true);
    for _ in 0..n {
        let s = random_schedule(&mut rng);
        for t in 1..=s.steps() {
            let (k, m, j) = s.ddim_coeffs(t).unwrap();
            worst = worst.max((k + m + j - 1.0).abs());
        }
        first_exact &= s.ddim_coeffs(1).unwrap() == (1.0, 0.0, 0.0);
    }
    (worst, first_exact)
}

/// Worst max-abs error of a reverse chain driven by the true x_0, and whether
/// every chain called the predictor exactly T times.
pub fn oracle_chain_error(n: usize, seed: u64) -> (f32, bool) {
    let mut rng = Rng::new(seed);
    let (mut worst, mut calls_ok) = (0.0f32, true);
    for _ in 0..n {
        let s = random_schedule(&mut rng);
        let x0 = Tensor::randn(&[2, 3, 8, 8], &mut rng, 0.5).unwrap().map(|v| v.clamp(-1.0, 1.0));
        let y = Tensor::randn(&[2, 3, 8, 8], &mut rng, 0.5).unwrap();
        let eps = Tensor::randn(&[2, 3, 8, 8], &mut rng, 1.0).unwrap();
        let x_t = init_state(&y, &eps, &s).unwrap();
        let mut calls = 0;
        let (out, _) = reverse_chain(
            |_, _| {
                calls += 1;
                Ok(x0.clone())
            },
            &y,
            x_t,
            &s,
        )
        .unwrap();
        calls_ok &= calls == s.steps();
        let err = out.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        worst = worst.max(err);
    }
    (worst, calls_ok)
}

/// Whether one reverse step from x_t with x̂_0 = x_0 returns x̂_0 bit-exactly at t=1.
pub fn last_step_is_exact() -> bool {
    let s = NoiseSchedule::new(15, 0.001, 0.9999, 1.0, 0.02).unwrap();
    let mut rng = Rng::new(3);
    let x0_hat = Tensor::randn(&[1, 3, 4, 4], &mut rng, 1.0).unwrap();
    let x_1 = Tensor::randn(&[1, 3, 4, 4], &mut rng, 1.0).unwrap();
    let y = Tensor::randn(&[1, 3, 4, 4], &mut rng, 1.0).unwrap();
    reverse_step(&x0_hat, &x_1, &y, 1, &s).unwrap() == x0_hat
}

/// Deterministic reverse step from forward-sampled x_t with the true x_0,
/// compared with the forward marginal at t−1 over `trials` noise draws, for
/// every t ≥ 2 of three schedules. Draws come in antithetic pairs (ε, −ε) so
/// the mean check is not swamped by Monte-Carlo error at large κ. Returns the
/// worst relative mean and variance errors.
pub fn marginal_errors(trials: usize) -> (f64, f64) {
    let schedules = [
        NoiseSchedule::new(15, 0.001, 0.9999, 1.0, 0.02).unwrap(),
        NoiseSchedule::new(8, 0.01, 0.8, 2.0, 0.02).unwrap(),
        NoiseSchedule::new(40, 0.0005, 1.0, 0.5, 0.02).unwrap(),
    ];
    let (x0v, yv) = (0.8f32, 0.4f32);
    let x0 = Tensor::full(&[trials], x0v);
    let y = Tensor::full(&[trials], yv);
    let mut rng = Rng::new(11);
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for s in &schedules {
        for t in 2..=s.steps() {
            let half: Vec<f32> = (0..trials / 2).map(|_| rng.normal() as f32).collect();
            let eps = Tensor::from_vec(&[trials], half.iter().flat_map(|&e| [e, -e]).collect()).unwrap();
            let x_t = forward_diffuse(&x0, &y, t, &eps, s).unwrap();
            let prev = reverse_step(&x0, &x_t, &y, t, s).unwrap();
            let n = trials as f64;
            let mean = prev.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = prev.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);

            let eta = s.eta(t - 1);
            let want_mean = (1.0 - eta) * x0v as f64 + eta * yv as f64;
            let want_var = s.kappa().powi(2) * eta;
            mean_err = mean_err.max((mean - want_mean).abs() / want_mean.abs());
            var_err = var_err.max((var - want_var).abs() / want_var);
        }
    }
    (mean_err, var_err)
}
