//! Synthetic phantom datasets, intensity scaling, the high-frequency
//! preprocessing pass and file I/O.

mod imageio;
mod manifest;
mod phantom;

pub use imageio::{decode_image, encode_image, encode_pgm, read_image, write_image, write_pgm, Window};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use phantom::{ellipse_phantom, highfreq_noise, synth_phantom_pair, SynthOptions};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::{highfreq_extract, Wavelet};

/// Divisor applied to HU values before the wavelet transform.
pub const INTENSITY_SCALE: f64 = 1024.0;

/// RNG stream reserved for dataset generation.
const SYNTH_STREAM: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    HighDose,
    LowDose,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::HighDose => "high_dose",
            Domain::LowDose => "low_dose",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high_dose" => Ok(Domain::HighDose),
            "low_dose" => Ok(Domain::LowDose),
            other => Err(Error::Format(format!("unknown domain tag '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub domain: Option<Domain>,
    /// `[H, W]` in HU.
    pub pixels: Tensor,
}

pub fn normalize_intensity(pixels: &Tensor) -> Tensor {
    pixels.scale(1.0 / INTENSITY_SCALE)
}

pub fn denormalize_intensity(t: &Tensor) -> Tensor {
    t.scale(INTENSITY_SCALE)
}

/// Unpaired training pools of high-frequency images, each `[H, W]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetPools {
    pub pool_x: Vec<Tensor>,
    pub pool_y: Vec<Tensor>,
    pub ids_x: Vec<String>,
    pub ids_y: Vec<String>,
}

impl DatasetPools {
    /// The first `ceil(fraction·n)` images of each pool.
    pub fn fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(contract_err!("fraction must lie in (0, 1]"));
        }
        let take = |n: usize| ((n as f64 * fraction).ceil() as usize).clamp(n.min(1), n);
        let (nx, ny) = (take(self.pool_x.len()), take(self.pool_y.len()));
        Ok(Self {
            pool_x: self.pool_x[..nx].to_vec(),
            pool_y: self.pool_y[..ny].to_vec(),
            ids_x: self.ids_x[..nx].to_vec(),
            ids_y: self.ids_y[..ny].to_vec(),
        })
    }
}

/// Normalizes, extracts high frequencies and sorts records into shuffled pools.
pub fn prepare_pools(records: &[ImageRecord], levels: usize, wavelet: Wavelet, seed: u64) -> Result<DatasetPools> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in records {
        let hf = highfreq_extract(&normalize_intensity(&r.pixels), levels, wavelet)?;
        match r.domain {
            Some(Domain::HighDose) => x.push((r.id.clone(), hf)),
            Some(Domain::LowDose) => y.push((r.id.clone(), hf)),
            None => return Err(contract_err!("record '{}' has no domain tag", r.id)),
        }
    }
    let mut rx = ChaCha8Rng::seed_from_u64(seed);
    rx.set_stream(1);
    let mut ry = ChaCha8Rng::seed_from_u64(seed);
    ry.set_stream(2);
    x.shuffle(&mut rx);
    y.shuffle(&mut ry);
    let (ids_x, pool_x) = x.into_iter().unzip();
    let (ids_y, pool_y) = y.into_iter().unzip();
    Ok(DatasetPools { pool_x, pool_y, ids_x, ids_y })
}

fn synth_options(cfg: &RunConfig) -> SynthOptions {
    SynthOptions {
        size: cfg.image_size,
        noise_sigma: cfg.noise_sigma,
        levels: cfg.wavelet_levels,
        wavelet: cfg.wavelet,
        ll_perturbation: cfg.ll_perturbation,
    }
}

/// Generates every train and eval pair in memory, in id order.
pub fn synth_records(cfg: &RunConfig) -> Result<Vec<(Split, usize, ImageRecord, ImageRecord)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SYNTH_STREAM);
    let opts = synth_options(cfg);
    let mut out = Vec::with_capacity(cfg.train_pairs + cfg.eval_pairs);
    for (split, n) in [(Split::Train, cfg.train_pairs), (Split::Eval, cfg.eval_pairs)] {
        for i in 0..n {
            let (clean, noisy) = synth_phantom_pair(&mut rng, &opts, &format!("{split}{i:04}"))?;
            out.push((split, i, clean, noisy));
        }
    }
    Ok(out)
}

/// Writes the synthetic dataset as raw images plus `manifest.tsv`.
pub fn write_dataset(cfg: &RunConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = Manifest::default();
    for (split, pair, clean, noisy) in synth_records(cfg)? {
        for (rec, sigma) in [(clean, 0.0), (noisy, cfg.noise_sigma)] {
            let rel = format!("images/{}.img", rec.id);
            write_image(dir.join(&rel), &rec.pixels)?;
            manifest.entries.push(ManifestEntry { id: rec.id, domain: rec.domain, path: rel, noise_sigma: sigma, split, pair });
        }
    }
    manifest.save(dir.join(manifest::MANIFEST_FILE))?;
    Ok(manifest)
}

fn load_record(dir: &Path, e: &ManifestEntry) -> Result<ImageRecord> {
    Ok(ImageRecord { id: e.id.clone(), domain: e.domain, pixels: read_image(dir.join(&e.path))? })
}

/// Training records: high-dose images of even pairs and low-dose images of odd
/// pairs, so no clean/noisy pair is seen by training.
pub fn load_training_records(dir: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join(manifest::MANIFEST_FILE))?;
    manifest
        .entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .filter(|e| match e.domain {
            Some(Domain::HighDose) => e.pair % 2 == 0,
            Some(Domain::LowDose) => e.pair % 2 == 1,
            None => true,
        })
        .map(|e| load_record(dir, e))
        .collect()
}

/// Paired `(clean, noisy)` evaluation records in pair order.
pub fn load_eval_pairs(dir: impl AsRef<Path>) -> Result<Vec<(ImageRecord, ImageRecord)>> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir.join(manifest::MANIFEST_FILE))?;
    let eval: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.split == Split::Eval).collect();
    let mut pairs = Vec::new();
    for e in eval.iter().filter(|e| e.domain == Some(Domain::HighDose)) {
        let partner = eval
            .iter()
            .find(|o| o.pair == e.pair && o.domain == Some(Domain::LowDose))
            .ok_or_else(|| Error::Format(format!("eval pair {} has no low-dose image", e.pair)))?;
        pairs.push((load_record(dir, e)?, load_record(dir, partner)?));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, domain: Option<Domain>, value: f64) -> ImageRecord {
        ImageRecord { id: id.into(), domain, pixels: Tensor::full([16, 16], value) }
    }

    #[test]
    fn intensity_scaling() {
        assert_eq!(normalize_intensity(&Tensor::full([2, 2], 1024.0)), Tensor::ones([2, 2]));
        assert_eq!(normalize_intensity(&Tensor::zeros([2, 2])), Tensor::zeros([2, 2]));
        let t = Tensor::from_fn([3, 3], |i| i as f64 * 37.3 - 100.0);
        assert_eq!(denormalize_intensity(&normalize_intensity(&t)), t);
    }

    #[test]
    fn pools_split_by_domain() {
        let recs = vec![
            record("a", Some(Domain::HighDose), 5.0),
            record("b", Some(Domain::LowDose), 1.0),
            record("c", Some(Domain::HighDose), 2.0),
        ];
        let p = prepare_pools(&recs, 4, Wavelet::Haar, 0).unwrap();
        assert_eq!((p.pool_x.len(), p.pool_y.len()), (2, 1));
        assert!(p.pool_x.iter().chain(&p.pool_y).all(|t| t.max_abs() < 1e-15));
        assert!(prepare_pools(&[record("u", None, 0.0)], 4, Wavelet::Haar, 0).is_err());
    }

    #[test]
    fn pool_images_have_zero_mean() {
        let cfg = RunConfig { train_pairs: 4, eval_pairs: 0, ..RunConfig::default() };
        let recs: Vec<ImageRecord> = synth_records(&cfg).unwrap().into_iter().flat_map(|(_, _, c, n)| [c, n]).collect();
        let p = prepare_pools(&recs, 6, Wavelet::Haar, 1).unwrap();
        for t in p.pool_x.iter().chain(&p.pool_y) {
            assert!(t.mean().abs() < 1e-6 * t.max_abs());
        }
    }

    #[test]
    fn fraction_takes_prefix() {
        let recs: Vec<ImageRecord> = (0..10).map(|i| record(&format!("r{i}"), Some(Domain::HighDose), i as f64)).collect();
        let p = prepare_pools(&recs, 2, Wavelet::Haar, 0).unwrap();
        let f = p.fraction(0.25).unwrap();
        assert_eq!(f.ids_x, p.ids_x[..3].to_vec());
        assert!(p.fraction(0.0).is_err());
    }
}
