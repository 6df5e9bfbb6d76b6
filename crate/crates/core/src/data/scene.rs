use crate::error::{arg_err, Result};
use crate::tensor::{Rng, Tensor};

/// Procedural HR scene in [−1, 1]: smooth gradient background, 3–8
/// anti-aliased shapes (boxes, disks, striped bands) and one patch of fine
/// stripes whose period sits below the 4× LR Nyquist limit.
pub fn gen_scene(rng: &mut Rng, size: usize, channels: usize) -> Result<Tensor> {
    if size < 32 || !size.is_power_of_two() {
        return Err(arg_err!("scene size must be a power of two >= 32, got {size}"));
    }
    if channels != 1 && channels != 3 {
        return Err(arg_err!("scene channels must be 1 or 3, got {channels}"));
    }
    let n = size * size;
    let s = size as f64;
    let color = |rng: &mut Rng| -> Vec<f64> { (0..channels).map(|_| rng.uniform_range(-0.85, 0.85)).collect() };

    let mut img = vec![0.0f64; channels * n];

    // background: two-corner linear gradient along a random direction
    let c0 = color(rng);
    let c1 = color(rng);
    let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5;
            for c in 0..channels {
                img[c * n + y * size + x] = c0[c] + (c1[c] - c0[c]) * u;
            }
        }
    }

    let shapes = rng.int_range(3, 8);
    for _ in 0..shapes {
        let kind = rng.int_range(0, 2);
        let col = color(rng);
        let cx = rng.uniform_range(0.1, 0.9) * s;
        let cy = rng.uniform_range(0.1, 0.9) * s;
        let half_w = rng.uniform_range(0.06, 0.25) * s;
        let half_h = rng.uniform_range(0.06, 0.25) * s;
        let angle = rng.uniform_range(0.0, std::f64::consts::PI);
        let (ca, sa) = (angle.cos(), angle.sin());
        let alt = color(rng);
        let period = rng.uniform_range(5.0, 10.0);
        for y in 0..size {
            for x in 0..size {
                let px = x as f64 + 0.5 - cx;
                let py = y as f64 + 0.5 - cy;
                let lx = ca * px + sa * py;
                let ly = -sa * px + ca * py;
                let sd = match kind {
                    1 => (px * px + py * py).sqrt() - half_w,
                    _ => {
                        let qx = lx.abs() - half_w;
                        let qy = ly.abs() - half_h;
                        let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                        outside + qx.max(qy).min(0.0)
                    }
                };
                let alpha = (0.5 - sd).clamp(0.0, 1.0);
                if alpha == 0.0 {
                    continue;
                }
                // striped band: blend two colours with a clamped sinusoid
                let mix = if kind == 2 {
                    ((lx * std::f64::consts::TAU / period).sin() * 2.0).clamp(-1.0, 1.0) * 0.5 + 0.5
                } else {
                    1.0
                };
                for c in 0..channels {
                    let v = col[c] * mix + alt[c] * (1.0 - mix);
                    let p = &mut img[c * n + y * size + x];
                    *p = *p * (1.0 - alpha) + v * alpha;
                }
            }
        }
    }

    // fine texture patch
    let pw = rng.uniform_range(0.25, 0.5) * s;
    let ph = rng.uniform_range(0.25, 0.5) * s;
    let x0 = rng.uniform_range(0.0, s - pw);
    let y0 = rng.uniform_range(0.0, s - ph);
    let period = rng.uniform_range(2.5, 5.0);
    let angle = rng.uniform_range(0.0, std::f64::consts::PI);
    let amp = rng.uniform_range(0.25, 0.5);
    let tint: Vec<f64> = (0..channels).map(|_| rng.uniform_range(0.6, 1.0)).collect();
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = (fx - x0).min(x0 + pw - fx).min(fy - y0).min(y0 + ph - fy);
            let alpha = (inside + 0.5).clamp(0.0, 1.0);
            if alpha == 0.0 {
                continue;
            }
            let phase = (fx * angle.cos() + fy * angle.sin()) * std::f64::consts::TAU / period;
            let v = amp * phase.sin() * alpha;
            for c in 0..channels {
                img[c * n + y * size + x] += v * tint[c];
            }
        }
    }

    let data = img.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    Tensor::from_vec(&[channels, size, size], data)
}

/// Mean per-pixel variance of `x − up2(box2(x))`: energy that a 2× box
/// downsample cannot represent.
pub fn high_frequency_energy(img: &Tensor) -> f64 {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut acc = 0.0;
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        let mut diffs = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (by, bx) = (y / 2 * 2, x / 2 * 2);
                let m = (plane[by * w + bx] + plane[by * w + bx + 1] + plane[(by + 1) * w + bx] + plane[(by + 1) * w + bx + 1])
                    as f64
                    / 4.0;
                diffs.push(plane[y * w + x] as f64 - m);
            }
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        acc += diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
    }
    acc / c as f64
}
