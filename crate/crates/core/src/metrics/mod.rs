//! Full-reference image quality metrics and a Fréchet distance over
//! hand-crafted image statistics. All kernels accumulate in f64.

mod frechet;
mod ssim;

pub use frechet::{frechet_distance, image_features, NEG_EIGEN_TOLERANCE};
pub use ssim::{gaussian_window, ms_ssim, ms_ssim_scales, ssim, MS_SSIM_DEFAULT_SCALES, MS_SSIM_WEIGHTS, WINDOW};

use crate::error::{arg_err, Result};
use crate::tensor::{same_shape, Tensor};

/// Peak value span of images in [−1, 1].
pub const MAX_VAL: f64 = 2.0;

/// 10·log10(max_val²/MSE); identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    same_shape(a.shape(), b.shape(), "psnr")?;
    if !(max_val > 0.0) {
        return Err(arg_err!("max_val must be positive, got {max_val}"));
    }
    if a.numel() == 0 {
        return Err(arg_err!("psnr of empty tensors"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Set-level scores: per-image PSNR/SSIM/MS-SSIM averaged, Fréchet over the sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub frechet: f64,
    pub n_images: usize,
}

/// MS-SSIM scale count for images with shorter side `side`: the default,
/// reduced until the coarsest scale still holds one window (never below 1).
pub fn ms_ssim_scales_for(side: usize) -> usize {
    (1..=MS_SSIM_DEFAULT_SCALES).rev().find(|&s| WINDOW << (s - 1) <= side).unwrap_or(1)
}

/// Per-image full-reference scores (psnr, ssim, ms_ssim); MS-SSIM uses
/// [`ms_ssim_scales_for`] so small images are still scored.
pub fn image_scores(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64, f64)> {
    let sh = pred.shape();
    let side = sh[sh.len().saturating_sub(2)..].iter().copied().min().unwrap_or(0);
    let ms = ms_ssim_scales(pred, truth, MAX_VAL, ms_ssim_scales_for(side))?;
    Ok((psnr(pred, truth, MAX_VAL)?, ssim(pred, truth, MAX_VAL)?, ms))
}

/// Aggregates per-image scores and computes the Fréchet distance between
/// prediction and reference features.
pub fn summarize(scores: &[(f64, f64, f64)], preds: &[Tensor], truths: &[Tensor]) -> Result<MetricReport> {
    if scores.is_empty() || scores.len() != preds.len() || preds.len() != truths.len() {
        return Err(arg_err!("need equal, non-zero numbers of scores, predictions and references"));
    }
    let n = scores.len() as f64;
    let fa = preds.iter().map(image_features).collect::<Result<Vec<_>>>()?;
    let fb = truths.iter().map(image_features).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        psnr: scores.iter().map(|s| s.0).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
        ms_ssim: scores.iter().map(|s| s.2).sum::<f64>() / n,
        frechet: frechet_distance(&fa, &fb)?,
        n_images: scores.len(),
    })
}

pub fn evaluate_set(preds: &[Tensor], truths: &[Tensor]) -> Result<MetricReport> {
    if preds.len() != truths.len() {
        return Err(arg_err!("{} predictions for {} references", preds.len(), truths.len()));
    }
    let scores = preds.iter().zip(truths).map(|(p, t)| image_scores(p, t)).collect::<Result<Vec<_>>>()?;
    summarize(&scores, preds, truths)
}
