//! Synthetic scenes, the degradation chain producing LR inputs, and the
//! PPM / manifest / checkpoint file formats.

mod checkpoint;
mod degrade;
mod ppm;
mod scene;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use degrade::{
    bicubic_upsample, degrade, degrade_with_draw, gaussian_kernel, DegradationConfig, DegradationDraw,
    DownsampleKernel,
};
pub use ppm::{load_ppm, save_ppm};
pub use scene::{gen_scene, high_frequency_energy};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{derive_seed, Rng, Tensor};

/// Ground-truth HR image `hr` (C,H,W) and its degraded LR input `lr` (C,H/4,W/4).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub hr: Tensor,
    pub lr: Tensor,
    pub id: String,
    pub degradation_seed: u64,
}

impl ImagePair {
    pub fn validate(&self) -> Result<()> {
        let (hs, ls) = (self.hr.shape(), self.lr.shape());
        if hs.len() != 3 || ls.len() != 3 {
            return Err(shape_err!("pair {}: expected (C,H,W) tensors", self.id));
        }
        if !(hs[0] == 1 || hs[0] == 3) || ls[0] != hs[0] {
            return Err(shape_err!("pair {}: channel mismatch {hs:?} vs {ls:?}", self.id));
        }
        if hs[1] % 4 != 0 || hs[2] % 4 != 0 || ls[1] * 4 != hs[1] || ls[2] * 4 != hs[2] {
            return Err(shape_err!("pair {}: LR {ls:?} is not HR {hs:?} / 4", self.id));
        }
        if !self.hr.is_finite() || !self.lr.is_finite() {
            return Err(Error::Argument(format!("pair {} has non-finite pixels", self.id)));
        }
        Ok(())
    }
}

/// Generates `n` RGB pairs; pair `i` depends only on `(seed, i)`.
pub fn make_dataset(n: usize, size: usize, cfg: &DegradationConfig, seed: u64) -> Result<Vec<ImagePair>> {
    make_dataset_with_channels(n, size, 3, cfg, seed)
}

pub fn make_dataset_with_channels(
    n: usize,
    size: usize,
    channels: usize,
    cfg: &DegradationConfig,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    if n == 0 {
        return Err(arg_err!("dataset size must be at least 1"));
    }
    cfg.validate()?;
    (0..n)
        .map(|i| {
            let pair_seed = derive_seed(seed, i as u64);
            let hr = gen_scene(&mut Rng::new(pair_seed), size, channels)?;
            let degradation_seed = derive_seed(pair_seed, 1);
            let lr = degrade(&hr, cfg, &mut Rng::new(degradation_seed))?;
            Ok(ImagePair { hr, lr, id: format!("{i:05}"), degradation_seed })
        })
        .collect()
}

/// Every `val_every`-th pair (by index) goes to validation, the rest to training.
pub fn split_train_val(pairs: Vec<ImagePair>, val_every: usize) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    if val_every < 2 {
        return Err(arg_err!("val_every must be >= 2, got {val_every}"));
    }
    Ok(pairs.into_iter().enumerate().fold((Vec::new(), Vec::new()), |(mut tr, mut va), (i, p)| {
        if i % val_every == val_every - 1 {
            va.push(p);
        } else {
            tr.push(p);
        }
        (tr, va)
    }))
}

/// Stacks the HR and LR images of `pairs` into (N,C,H,W) batches.
pub fn stack_pairs(pairs: &[&ImagePair]) -> Result<(Tensor, Tensor)> {
    let hr: Vec<&Tensor> = pairs.iter().map(|p| &p.hr).collect();
    let lr: Vec<&Tensor> = pairs.iter().map(|p| &p.lr).collect();
    Ok((Tensor::stack(&hr)?, Tensor::stack(&lr)?))
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One manifest line: `id  hr_path  lr_path  degradation_seed`, paths relative
/// to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub degradation_seed: u64,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{}\t{}\t{}\t{}", e.id, e.hr_path.display(), e.lr_path.display(), e.degradation_seed)
            .expect("write to string");
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.is_empty() {
            let cols: Vec<&str> = body.split('\t').collect();
            let bad = |msg: &str| Error::Format { offset, msg: msg.to_string() };
            if cols.len() != 4 {
                return Err(bad("manifest line must have 4 tab-separated columns"));
            }
            let degradation_seed = cols[3].parse().map_err(|_| bad("degradation seed is not a u64"))?;
            out.push(ManifestEntry {
                id: cols[0].to_string(),
                hr_path: cols[1].into(),
                lr_path: cols[2].into(),
                degradation_seed,
            });
        }
        offset += line.len();
    }
    Ok(out)
}

/// Writes `hr/<id>.ppm`, `lr/<id>.ppm` and the manifest under `dir`.
pub fn write_dataset(dir: &Path, pairs: &[ImagePair]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("hr"))?;
    std::fs::create_dir_all(dir.join("lr"))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let hr_path = PathBuf::from("hr").join(format!("{}.ppm", p.id));
        let lr_path = PathBuf::from("lr").join(format!("{}.ppm", p.id));
        std::fs::write(dir.join(&hr_path), save_ppm(&p.hr)?)?;
        std::fs::write(dir.join(&lr_path), save_ppm(&p.lr)?)?;
        entries.push(ManifestEntry { id: p.id.clone(), hr_path, lr_path, degradation_seed: p.degradation_seed });
    }
    let manifest = dir.join(MANIFEST_NAME);
    std::fs::write(&manifest, format_manifest(&entries))?;
    Ok(manifest)
}

/// Loads every pair listed in a manifest.
pub fn read_dataset(manifest: &Path) -> Result<Vec<ImagePair>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&std::fs::read_to_string(manifest)?)?;
    entries
        .into_iter()
        .map(|e| {
            let pair = ImagePair {
                hr: load_ppm(&std::fs::read(root.join(&e.hr_path))?)?,
                lr: load_ppm(&std::fs::read(root.join(&e.lr_path))?)?,
                id: e.id,
                degradation_seed: e.degradation_seed,
            };
            pair.validate()?;
            Ok(pair)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::hash::{DefaultHasher, Hash, Hasher};

    #[test]
    fn single_pair_reproducible() {
        let cfg = DegradationConfig::default();
        let a = make_dataset(1, 32, &cfg, 99).unwrap();
        let b = make_dataset(1, 32, &cfg, 99).unwrap();
        assert_eq!(a, b);
        a[0].validate().unwrap();
    }

    #[test]
    fn pairs_are_order_stable() {
        let cfg = DegradationConfig::default();
        let small = make_dataset(3, 32, &cfg, 4).unwrap();
        let large = make_dataset(6, 32, &cfg, 4).unwrap();
        assert_eq!(&large[..3], &small[..]);
    }

    #[test]
    fn hundred_pairs_are_distinct() {
        let pairs = make_dataset(100, 32, &DegradationConfig::default(), 1).unwrap();
        let hashes: HashSet<u64> = pairs
            .iter()
            .map(|p| {
                let mut h = DefaultHasher::new();
                p.hr.data().iter().chain(p.lr.data()).for_each(|v| v.to_bits().hash(&mut h));
                h.finish()
            })
            .collect();
        assert_eq!(hashes.len(), 100);
    }

    #[test]
    fn degradation_draws_differ_across_corpus() {
        let cfg = DegradationConfig::default();
        let pairs = make_dataset(20, 32, &cfg, 2).unwrap();
        let draws: Vec<DegradationDraw> = pairs
            .iter()
            .map(|p| degrade_with_draw(&p.hr, &cfg, &mut Rng::new(p.degradation_seed)).unwrap().1)
            .collect();
        for (i, a) in draws.iter().enumerate() {
            for b in &draws[i + 1..] {
                assert!(a.blur_sigma != b.blur_sigma && a.noise_sigma != b.noise_sigma);
            }
        }
    }

    #[test]
    fn split_is_stable() {
        let pairs = make_dataset(10, 32, &DegradationConfig::default(), 3).unwrap();
        let (tr, va) = split_train_val(pairs.clone(), 2).unwrap();
        let (tr2, va2) = split_train_val(pairs, 2).unwrap();
        assert_eq!((tr.len(), va.len()), (5, 5));
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert!(va.iter().all(|p| p.id.parse::<usize>().unwrap() % 2 == 1));
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry { id: "a".into(), hr_path: "hr/a.ppm".into(), lr_path: "lr/a.ppm".into(), degradation_seed: 7 },
            ManifestEntry { id: "b".into(), hr_path: "hr/b.ppm".into(), lr_path: "lr/b.ppm".into(), degradation_seed: u64::MAX },
        ];
        let text = format_manifest(&entries);
        assert_eq!(text.lines().next().unwrap(), "a\thr/a.ppm\tlr/a.ppm\t7");
        assert_eq!(parse_manifest(&text).unwrap(), entries);
        assert!(matches!(parse_manifest("a\tb\tc\t1\nbad line\n"), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn fine_detail_present_for_most_scenes() {
        let hits = (0..200)
            .filter(|&s| high_frequency_energy(&gen_scene(&mut Rng::new(s), 64, 3).unwrap()) > 1e-3)
            .count();
        assert!(hits >= 190, "{hits}/200 scenes carry sub-LR detail");
    }
}
