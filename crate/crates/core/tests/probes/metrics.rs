//! Shared metric oracle probes (also used by the CLI acceptance suite).

#![allow(dead_code)]

use colearn_core::metrics::{frechet_distance, psnr, ssim};
use colearn_core::{Rng, Tensor};

/// SSIM evaluated window by window from a freshly built 2-D Gaussian table.
pub fn brute_force_ssim(a: &Tensor, b: &Tensor, l: f64) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let a: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let (mut sum, mut count) = (0.0, 0.0);
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let at = |v: &[f64], i: usize, j: usize| v[(y + i) * w + x + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] / total * at(&a, i, j);
                    mb += win[i][j] / total * at(&b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i][j] / total;
                    let (da, db) = (at(&a, i, j) - ma, at(&b, i, j) - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    sum / count
}

/// Worst |ssim − brute force| over `n` random 16×16 pairs.
pub fn ssim_oracle_error(n: u64) -> f64 {
    (0..n)
        .map(|i| {
            let mut rng = Rng::new(500 + i);
            let a = Tensor::randn(&[16, 16], &mut rng, 0.4).unwrap().map(|v| v.clamp(-1.0, 1.0));
            let noise = Tensor::randn(&[16, 16], &mut rng, 0.05 + 0.05 * i as f32).unwrap();
            let b = a.zip_map(&noise, |x, e| (x + e).clamp(-1.0, 1.0)).unwrap();
            (ssim(&a, &b, 2.0).unwrap() - brute_force_ssim(&a, &b, 2.0)).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst deviation (dB) from closed-form PSNR: constant offsets δ give
/// 20·log10(2/δ), black against white gives 0, and equal images give +∞.
pub fn psnr_closed_form_error() -> f64 {
    let base = Tensor::full(&[3, 8, 8], -0.2);
    let mut worst = 0.0f64;
    for delta in [0.5f32, 0.1, 0.02, 0.004] {
        let got = psnr(&base, &base.map(|v| v + delta), 2.0).unwrap();
        worst = worst.max((got - 20.0 * (2.0 / delta as f64).log10()).abs());
    }
    let (black, white) = (Tensor::full(&[1, 4, 4], -1.0), Tensor::full(&[1, 4, 4], 1.0));
    worst = worst.max(psnr(&black, &white, 2.0).unwrap().abs());
    if psnr(&base, &base, 2.0).unwrap() != f64::INFINITY {
        worst = f64::INFINITY;
    }
    worst
}

/// Fréchet distance between N(0,1) and N(0,4) samples (population value 1)
/// at `n` draws each, and on an identical 4-D set.
pub fn frechet_oracles(n: usize) -> (f64, f64) {
    let mut rng = Rng::new(11);
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal()]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![2.0 * rng.normal()]).collect();
    let gaussian = frechet_distance(&a, &b).unwrap();
    let c: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
    (gaussian, frechet_distance(&c, &c).unwrap())
}
