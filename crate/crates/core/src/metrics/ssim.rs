use crate::error::{arg_err, Result};
use crate::tensor::{same_shape, Tensor};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;

/// Standard five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Planes of an image tensor: everything but the last two axes is flattened.
pub(crate) fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() < 2 {
        return Err(arg_err!("image needs at least two dimensions, got {s:?}"));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((t.numel() / (h * w).max(1), h, w))
}

/// Valid-mode separable filtering of one plane.
fn filter(p: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM map and mean contrast-structure map of two planes.
fn plane_stats(a: &[f64], b: &[f64], h: usize, w: usize, max_val: f64) -> (f64, f64) {
    let k = gaussian_window();
    let (c1, c2) = ((0.01 * max_val).powi(2), (0.03 * max_val).powi(2));
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter(a, h, w, &k);
    let mu_b = filter(b, h, w, &k);
    let aa = filter(&prod(a, a), h, w, &k);
    let bb = filter(&prod(b, b), h, w, &k);
    let ab = filter(&prod(a, b), h, w, &k);
    let n = mu_a.len() as f64;
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    (s_sum / n, cs_sum / n)
}

/// (ssim, cs) averaged over every plane.
fn image_stats(a: &[f64], b: &[f64], np: usize, h: usize, w: usize, max_val: f64) -> (f64, f64) {
    let (mut s, mut cs) = (0.0, 0.0);
    for p in 0..np {
        let r = p * h * w..(p + 1) * h * w;
        let (ps, pcs) = plane_stats(&a[r.clone()], &b[r], h, w, max_val);
        s += ps;
        cs += pcs;
    }
    (s / np as f64, cs / np as f64)
}

fn check(a: &Tensor, b: &Tensor, max_val: f64, min_side: usize) -> Result<(usize, usize, usize)> {
    same_shape(a.shape(), b.shape(), "ssim")?;
    if !(max_val > 0.0) {
        return Err(arg_err!("max_val must be positive, got {max_val}"));
    }
    let (np, h, w) = planes(a)?;
    if h.min(w) < min_side {
        return Err(arg_err!("image {h}x{w} is smaller than the required {min_side} pixels"));
    }
    Ok((np, h, w))
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5) averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    let (np, h, w) = check(a, b, max_val, WINDOW)?;
    Ok(image_stats(&to_f64(a), &to_f64(b), np, h, w, max_val).0)
}

fn box_down2(p: &[f64], np: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(np * oh * ow);
    for plane in p.chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0);
            }
        }
    }
    out
}

/// Multi-scale SSIM over `scales` levels (1..=5); the standard exponents
/// are truncated to the first `scales` entries and renormalised.
pub fn ms_ssim_scales(a: &Tensor, b: &Tensor, max_val: f64, scales: usize) -> Result<f64> {
    if !(1..=5).contains(&scales) {
        return Err(arg_err!("scales must be in 1..=5, got {scales}"));
    }
    let (np, mut h, mut w) = check(a, b, max_val, WINDOW << (scales - 1))?;
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut pa, mut pb) = (to_f64(a), to_f64(b));
    let mut acc = 1.0;
    for (i, wt) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (s, cs) = image_stats(&pa, &pb, np, h, w, max_val);
        let last = i + 1 == scales;
        let term = if last { s } else { cs };
        acc *= if scales == 1 { term } else { term.max(0.0).powf(wt / total) };
        if !last {
            pa = box_down2(&pa, np, h, w);
            pb = box_down2(&pb, np, h, w);
            h /= 2;
            w /= 2;
        }
    }
    Ok(acc)
}

pub const MS_SSIM_DEFAULT_SCALES: usize = 3;

pub fn ms_ssim(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    ms_ssim_scales(a, b, max_val, MS_SSIM_DEFAULT_SCALES)
}
