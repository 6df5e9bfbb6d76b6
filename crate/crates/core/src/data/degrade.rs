use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Rng, Tensor};

/// Kernel used for the 4× decimation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleKernel {
    /// 4×4 block average.
    Box,
    /// Separable 8-tap triangle centred on each block.
    Tent,
}

/// Synthetic degradation chain: blur → 4× downsample → noise → quantize → clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationConfig {
    pub blur_sigma_range: [f64; 2],
    pub noise_sigma_range: [f64; 2],
    pub quantize_levels: Option<u32>,
    pub downsample_kernel: DownsampleKernel,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.4, 1.2],
            noise_sigma_range: [0.0, 0.02],
            quantize_levels: Some(64),
            downsample_kernel: DownsampleKernel::Box,
        }
    }
}

impl DegradationConfig {
    /// Blur, noise and quantization disabled; box decimation only.
    pub fn identity() -> Self {
        Self {
            blur_sigma_range: [0.0, 0.0],
            noise_sigma_range: [0.0, 0.0],
            quantize_levels: None,
            downsample_kernel: DownsampleKernel::Box,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("blur", self.blur_sigma_range), ("noise", self.noise_sigma_range)] {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(arg_err!("{name} sigma range [{lo}, {hi}] must satisfy 0 <= lo <= hi"));
            }
        }
        if let Some(l) = self.quantize_levels {
            if l < 2 {
                return Err(arg_err!("quantize_levels must be >= 2, got {l}"));
            }
        }
        Ok(())
    }
}

/// Per-image parameters drawn by [`degrade_with_draw`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationDraw {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

pub fn degrade(hr: &Tensor, cfg: &DegradationConfig, rng: &mut Rng) -> Result<Tensor> {
    degrade_with_draw(hr, cfg, rng).map(|(t, _)| t)
}

/// Degrades a (C,H,W) image to (C,H/4,W/4), also returning the drawn parameters.
pub fn degrade_with_draw(hr: &Tensor, cfg: &DegradationConfig, rng: &mut Rng) -> Result<(Tensor, DegradationDraw)> {
    cfg.validate()?;
    let (c, h, w) = match *hr.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err!("degrade expects (C,H,W), got {s:?}")),
    };
    if h % 4 != 0 || w % 4 != 0 {
        return Err(shape_err!("HR dims {h}x{w} must be divisible by 4"));
    }
    let blur_sigma = rng.uniform_range(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
    let noise_sigma = rng.uniform_range(cfg.noise_sigma_range[0], cfg.noise_sigma_range[1]);

    let mut planes: Vec<Vec<f64>> = hr.data().chunks(h * w).map(|p| p.iter().map(|&v| v as f64).collect()).collect();
    if blur_sigma > 0.0 {
        let k = gaussian_kernel(blur_sigma);
        for p in planes.iter_mut() {
            *p = separable(p, h, w, &k, &k);
        }
    }
    let (lh, lw) = (h / 4, w / 4);
    let mut out = Vec::with_capacity(c * lh * lw);
    for p in &planes {
        out.extend(decimate4(p, h, w, cfg.downsample_kernel));
    }
    for v in out.iter_mut() {
        if noise_sigma > 0.0 {
            *v += noise_sigma * rng.normal();
        }
        if let Some(levels) = cfg.quantize_levels {
            let l = (levels - 1) as f64;
            *v = ((*v + 1.0) / 2.0 * l).round().clamp(0.0, l) / l * 2.0 - 1.0;
        }
        *v = v.clamp(-1.0, 1.0);
    }
    let t = Tensor::from_vec(&[c, lh, lw], out.into_iter().map(|v| v as f32).collect())?;
    Ok((t, DegradationDraw { blur_sigma, noise_sigma }))
}

/// Normalised Gaussian truncated at 4σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation with edge replication.
fn separable(p: &[f64], h: usize, w: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx
                .iter()
                .enumerate()
                .map(|(i, &k)| k * p[y * w + clampi(x as isize + i as isize - rx, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky
                .iter()
                .enumerate()
                .map(|(i, &k)| k * tmp[clampi(y as isize + i as isize - ry, h) * w + x])
                .sum();
        }
    }
    out
}

fn decimate4(p: &[f64], h: usize, w: usize, kernel: DownsampleKernel) -> Vec<f64> {
    let (lh, lw) = (h / 4, w / 4);
    match kernel {
        DownsampleKernel::Box => {
            let mut out = vec![0.0; lh * lw];
            for y in 0..h {
                for x in 0..w {
                    out[(y / 4) * lw + x / 4] += p[y * w + x] / 16.0;
                }
            }
            out
        }
        DownsampleKernel::Tent => {
            // 8 taps at distances ±0.5..±3.5 from the block centre
            let taps: Vec<f64> = (0..8).map(|i| (1.0 - ((i as f64 - 3.5).abs() / 4.0)) / 4.0).collect();
            let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
            let mut out = vec![0.0; lh * lw];
            for oy in 0..lh {
                for ox in 0..lw {
                    let mut acc = 0.0;
                    for (i, ty) in taps.iter().enumerate() {
                        let y = clampi(4 * oy as isize - 2 + i as isize, h);
                        for (j, tx) in taps.iter().enumerate() {
                            let x = clampi(4 * ox as isize - 2 + j as isize, w);
                            acc += ty * tx * p[y * w + x];
                        }
                    }
                    out[oy * lw + ox] = acc;
                }
            }
            out
        }
    }
}

/// Separable Keys (a = −0.5) bicubic upsampling of a (N,C,H,W) batch.
pub fn bicubic_upsample(t: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4()?;
    let cubic = |x: f64| {
        let a = -0.5;
        let x = x.abs();
        if x <= 1.0 {
            (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
        } else if x < 2.0 {
            a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
        } else {
            0.0
        }
    };
    let weights = |out_len: usize, in_len: usize| -> Vec<[(usize, f64); 4]> {
        (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) / factor as f64 - 0.5;
                let base = src.floor() as isize;
                let mut taps = [(0usize, 0.0f64); 4];
                for (k, tap) in taps.iter_mut().enumerate() {
                    let i = base - 1 + k as isize;
                    *tap = (i.clamp(0, in_len as isize - 1) as usize, cubic(src - i as f64));
                }
                taps
            })
            .collect()
    };
    let (oh, ow) = (h * factor, w * factor);
    let (wy, wx) = (weights(oh, h), weights(ow, w));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in t.data().chunks(h * w) {
        let mut tmp = vec![0.0f64; h * ow];
        for y in 0..h {
            for (x, taps) in wx.iter().enumerate() {
                tmp[y * ow + x] = taps.iter().map(|&(i, k)| k * plane[y * w + i] as f64).sum();
            }
        }
        for taps in &wy {
            for x in 0..ow {
                let v: f64 = taps.iter().map(|&(i, k)| k * tmp[i * ow + x]).sum();
                out.push(v.clamp(-1.0, 1.0) as f32);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}
