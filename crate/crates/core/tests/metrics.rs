#[path = "probes/metrics.rs"]
mod probes;

use colearn_core::metrics::{ms_ssim, ssim};
use colearn_core::{Rng, Tensor};
use probes::*;
use proptest::prelude::*;

#[test]
fn ssim_matches_window_by_window_oracle() {
    let err = ssim_oracle_error(10);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn psnr_matches_closed_forms() {
    let err = psnr_closed_form_error();
    assert!(err < 1e-4, "{err} dB");
}

#[test]
fn frechet_matches_gaussian_closed_form() {
    let (gaussian, identical) = frechet_oracles(10_000);
    assert!((gaussian - 1.0).abs() < 0.15, "{gaussian}");
    assert!(identical.abs() < 1e-6, "{identical}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn structural_scores_are_symmetric_and_bounded(seed in 0u64..1_000, sigma in 0.01f32..0.5) {
        let mut rng = Rng::new(seed);
        let a = Tensor::randn(&[3, 48, 48], &mut rng, 0.4).unwrap().map(|v| v.clamp(-1.0, 1.0));
        let n = Tensor::randn(&[3, 48, 48], &mut rng, sigma).unwrap();
        let b = a.zip_map(&n, |x, e| (x + e).clamp(-1.0, 1.0)).unwrap();
        let (s_ab, s_ba) = (ssim(&a, &b, 2.0).unwrap(), ssim(&b, &a, 2.0).unwrap());
        prop_assert!((s_ab - s_ba).abs() < 1e-12);
        prop_assert!(s_ab <= 1.0 && s_ab > -1.0);
        let m = ms_ssim(&a, &b, 2.0).unwrap();
        prop_assert!((m - ms_ssim(&b, &a, 2.0).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m));
    }
}
