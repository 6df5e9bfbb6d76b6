use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{arg_err, Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues below this are treated as numerical noise and floored at 0.
pub const NEG_EIGEN_TOLERANCE: f64 = -1e-6;

fn moments(feats: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len() as f64;
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mu;
        cov += &c * c.transpose();
    }
    (mu, cov / (n - 1.0))
}

/// Square root of a symmetric PSD matrix; returns the floored eigenvalue sum too.
fn sym_sqrt(m: DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < NEG_EIGEN_TOLERANCE * scale {
            return Err(Error::Contract(format!("{what} has negative eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    let trace = roots.sum();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((root, trace))
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// ‖μa−μb‖² + Tr(Σa + Σb − 2(Σa^{1/2} Σb Σa^{1/2})^{1/2}).
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let d = a.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(arg_err!("feature sets must be non-empty with dimension >= 1"));
    }
    if a.iter().chain(b).any(|f| f.len() != d) {
        return Err(arg_err!("all feature vectors must have dimension {d}"));
    }
    if a.len() < d + 1 || b.len() < d + 1 {
        return Err(arg_err!("need at least {} samples per set for {d}-dim features, got {} and {}", d + 1, a.len(), b.len()));
    }
    let (mu_a, cov_a) = moments(a, d);
    let (mu_b, cov_b) = moments(b, d);
    let (root_a, _) = sym_sqrt(cov_a.clone(), "covariance A")?;
    let inner = &root_a * &cov_b * &root_a;
    let (_, tr_cross) = sym_sqrt(inner, "cross covariance")?;
    let diff = (mu_a - mu_b).norm_squared();
    let fd = diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
    if fd < NEG_EIGEN_TOLERANCE * (1.0 + cov_a.trace() + cov_b.trace()) {
        return Err(Error::Contract(format!("Fréchet distance came out negative ({fd})")));
    }
    Ok(fd.max(0.0))
}

/// Detail energy of a plane: mean squared residual after 2× box smoothing.
fn detail_energy(p: &[f64], h: usize, w: usize) -> (f64, Vec<f64>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut coarse = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            coarse[y * ow + x] = (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) / 4.0;
        }
    }
    let mut e = 0.0;
    for y in 0..oh * 2 {
        for x in 0..ow * 2 {
            e += (p[y * w + x] - coarse[(y / 2) * ow + x / 2]).powi(2);
        }
    }
    (e / (4 * oh * ow) as f64, coarse)
}

/// Hand-crafted (2C+2)-dim descriptor of a (C,H,W) image: per-channel mean
/// and standard deviation followed by channel-averaged detail energy at the
/// full and half scale.
pub fn image_features(img: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] if h >= 4 && w >= 4 => (c, h, w),
        ref s => return Err(arg_err!("features need a (C,H,W) image with H,W >= 4, got {s:?}")),
    };
    let mut stats = Vec::with_capacity(2 * c);
    let (mut e1, mut e2) = (0.0, 0.0);
    for plane in img.data().chunks(h * w) {
        let p: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64;
        stats.push(mean);
        stats.push(var.sqrt());
        let (fine, coarse) = detail_energy(&p, h, w);
        let (half, _) = detail_energy(&coarse, h / 2, w / 2);
        e1 += fine;
        e2 += half;
    }
    let mut out: Vec<f64> = stats.iter().step_by(2).copied().collect();
    out.extend(stats.iter().skip(1).step_by(2));
    out.push(e1 / c as f64);
    out.push(e2 / c as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = Rng::new(3);
        let a: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn point_masses_give_squared_mean_gap() {
        let a = vec![vec![0.0]; 5];
        let b = vec![vec![1.0]; 5];
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dim_gaussians_match_closed_form() {
        let mut rng = Rng::new(11);
        let a: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.normal()]).collect();
        let b: Vec<Vec<f64>> = (0..10_000).map(|_| vec![2.0 * rng.normal()]).collect();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 1.0).abs() < 0.15, "{fd}");
    }

    #[test]
    fn matches_closed_form_for_commuting_covariances() {
        // diagonal covariances: FD = Σ (μa−μb)² + (σa−σb)² per axis
        let mut rng = Rng::new(4);
        let sa = [1.0, 0.5, 2.0];
        let sb = [1.5, 0.5, 1.0];
        let a: Vec<Vec<f64>> = (0..20_000).map(|_| sa.iter().map(|s| s * rng.normal()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..20_000).map(|_| sb.iter().map(|s| 1.0 + s * rng.normal()).collect()).collect();
        let expected: f64 = 3.0 + sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - expected).abs() < 0.1, "{fd} vs {expected}");
    }

    #[test]
    fn argument_checks() {
        let a = vec![vec![0.0, 1.0]; 2];
        assert!(frechet_distance(&a, &a).is_err());
        assert!(frechet_distance(&[], &[]).is_err());
        let mixed = vec![vec![0.0], vec![0.0, 1.0], vec![1.0]];
        assert!(frechet_distance(&mixed, &mixed).is_err());
    }

    #[test]
    fn feature_layout() {
        let img = Tensor::from_vec(&[1, 4, 4], (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
        let f = image_features(&img).unwrap();
        assert_eq!(f.len(), 4);
        assert!((f[0]).abs() < 1e-12);
        assert!((f[1] - 1.0).abs() < 1e-12);
        // alternating columns: every pixel sits ±1 from its 2×2 block mean of 0
        assert!((f[2] - 1.0).abs() < 1e-12);
        assert!(f[3].abs() < 1e-12);
        assert_eq!(image_features(&Tensor::zeros(&[3, 8, 8])).unwrap().len(), 8);
    }
}
