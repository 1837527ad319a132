use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Domain, ImageRecord};
use crate::error::{contract_err, Result};
use crate::tensor::Tensor;
use crate::wavelet::{lowfreq_extract, Wavelet, DEFAULT_LEVELS};

/// Air outside the body, HU.
const AIR_HU: f64 = -1000.0;
/// Soft-tissue body, HU.
const TISSUE_HU: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub size: usize,
    /// Standard deviation of the added noise, HU.
    pub noise_sigma: f64,
    pub levels: usize,
    pub wavelet: Wavelet,
    /// Standard deviation of an extra smooth perturbation, HU. Breaks the
    /// high-frequency-only noise assumption on purpose.
    pub ll_perturbation: f64,
}

impl SynthOptions {
    pub fn new(size: usize, noise_sigma: f64) -> Self {
        Self { size, noise_sigma, levels: DEFAULT_LEVELS, wavelet: Wavelet::Haar, ll_perturbation: 0.0 }
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    sin: f64,
    cos: f64,
}

impl Ellipse {
    fn random<R: Rng + ?Sized>(rng: &mut R, cy: f64, cx: f64, ay: f64, ax: f64) -> Self {
        let (sin, cos) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
        Self { cy, cx, ay, ax, sin, cos }
    }

    /// Body-frame coordinates scaled so the boundary is the unit circle.
    fn local(&self, y: f64, x: f64) -> (f64, f64) {
        let (dy, dx) = (y - self.cy, x - self.cx);
        ((dx * self.cos + dy * self.sin) / self.ax, (-dx * self.sin + dy * self.cos) / self.ay)
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (u, v) = self.local(y, x);
        u * u + v * v <= 1.0
    }
}

/// CT-like phantom: a soft-tissue body ellipse in air holding 5 to 9
/// overlapping inner ellipses of ±60 to 400 HU.
pub fn ellipse_phantom<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Tensor {
    let s = size as f64;
    let jitter = |rng: &mut R| rng.random_range(-0.04..0.04) * s;
    let (by, bx) = (0.5 * s + jitter(rng), 0.5 * s + jitter(rng));
    let (ay, ax) = (rng.random_range(0.36..0.46) * s, rng.random_range(0.36..0.46) * s);
    let body = Ellipse::random(rng, by, bx, ay, ax);
    let n = rng.random_range(5..=9);
    let inner: Vec<(Ellipse, f64)> = (0..n)
        .map(|_| {
            // centre uniformly inside 60% of the body, in body coordinates
            let r = 0.6 * rng.random_range(0.0f64..1.0).sqrt();
            let (ps, pc) = rng.random_range(0.0..std::f64::consts::TAU).sin_cos();
            let (u, v) = (r * pc * body.ax, r * ps * body.ay);
            let cy = body.cy + u * body.sin + v * body.cos;
            let cx = body.cx + u * body.cos - v * body.sin;
            let (ay, ax) = (rng.random_range(0.04..0.18) * s, rng.random_range(0.04..0.18) * s);
            let e = Ellipse::random(rng, cy, cx, ay, ax);
            let magnitude = rng.random_range(60.0..400.0);
            (e, if rng.random_bool(0.5) { magnitude } else { -magnitude })
        })
        .collect();
    Tensor::from_fn([size, size], |i| {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        if !body.contains(y, x) {
            return AIR_HU;
        }
        TISSUE_HU + inner.iter().filter(|(e, _)| e.contains(y, x)).map(|(_, v)| v).sum::<f64>()
    })
}

fn population_std(t: &Tensor) -> f64 {
    let m = t.mean();
    (t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.numel() as f64).sqrt()
}

fn rescale_to_std(t: &Tensor, sigma: f64) -> Tensor {
    let s = population_std(t);
    if s == 0.0 {
        return Tensor::zeros(t.shape().to_vec());
    }
    let m = t.mean();
    t.map(|v| (v - m) * sigma / s)
}

/// White Gaussian noise with its coarsest wavelet band removed, rescaled to
/// standard deviation `sigma`.
pub fn highfreq_noise<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    sigma: f64,
    levels: usize,
    wavelet: Wavelet,
) -> Result<Tensor> {
    let white = Tensor::from_fn([size, size], |_| StandardNormal.sample(rng));
    let hf = white.sub(&lowfreq_extract(&white, levels, wavelet)?)?;
    Ok(rescale_to_std(&hf, sigma))
}

/// One period of a randomly oriented plane wave, rescaled to `sigma`.
fn smooth_perturbation<R: Rng + ?Sized>(rng: &mut R, size: usize, sigma: f64) -> Tensor {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (fy, fx) = angle.sin_cos();
    let k = std::f64::consts::TAU / size as f64;
    let field = Tensor::from_fn([size, size], |i| {
        let (y, x) = ((i / size) as f64, (i % size) as f64);
        (k * (fx * x + fy * y) + phase).cos()
    });
    rescale_to_std(&field, sigma)
}

/// A clean phantom and its noisy counterpart, ids `{pair_id}-hd` / `{pair_id}-ld`.
pub fn synth_phantom_pair<R: Rng + ?Sized>(
    rng: &mut R,
    opts: &SynthOptions,
    pair_id: &str,
) -> Result<(ImageRecord, ImageRecord)> {
    if opts.size < 1 << opts.levels {
        return Err(contract_err!("phantom size {} is smaller than 2^{}", opts.size, opts.levels));
    }
    let clean = ellipse_phantom(rng, opts.size);
    let mut noisy = clean.clone();
    if opts.noise_sigma > 0.0 {
        noisy = noisy.add(&highfreq_noise(rng, opts.size, opts.noise_sigma, opts.levels, opts.wavelet)?)?;
    }
    if opts.ll_perturbation > 0.0 {
        noisy = noisy.add(&smooth_perturbation(rng, opts.size, opts.ll_perturbation))?;
    }
    Ok((
        ImageRecord { id: format!("{pair_id}-hd"), domain: Some(Domain::HighDose), pixels: clean },
        ImageRecord { id: format!("{pair_id}-ld"), domain: Some(Domain::LowDose), pixels: noisy },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::highfreq_extract;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_gives_identical_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, n) = synth_phantom_pair(&mut rng, &SynthOptions::new(64, 0.0), "p").unwrap();
        assert_eq!(c.pixels, n.pixels);
        assert_eq!((c.domain, n.domain), (Some(Domain::HighDose), Some(Domain::LowDose)));
    }

    #[test]
    fn noise_is_highfreq_with_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (c, n) = synth_phantom_pair(&mut rng, &SynthOptions::new(64, 40.0), "p").unwrap();
            let noise = n.pixels.sub(&c.pixels).unwrap();
            let hf = highfreq_extract(&noise, 6, Wavelet::Haar).unwrap();
            assert!(hf.max_abs_diff(&noise).unwrap() < 1e-6);
            assert!((population_std(&noise) - 40.0).abs() < 0.05 * 40.0);
        }
    }

    #[test]
    fn perturbation_breaks_ll_freedom() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = SynthOptions { ll_perturbation: 20.0, ..SynthOptions::new(64, 0.0) };
        let (c, n) = synth_phantom_pair(&mut rng, &opts, "p").unwrap();
        let d = n.pixels.sub(&c.pixels).unwrap();
        assert!((population_std(&d) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn piecewise_constant_and_reproducible() {
        let a = ellipse_phantom(&mut ChaCha8Rng::seed_from_u64(9), 64);
        let b = ellipse_phantom(&mut ChaCha8Rng::seed_from_u64(9), 64);
        assert_eq!(a, b);
        let mut levels: Vec<i64> = a.data().iter().map(|v| v.round() as i64).collect();
        levels.sort_unstable();
        levels.dedup();
        assert!(levels.len() > 2 && levels.len() < 200);
    }

    #[test]
    fn rejects_small_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synth_phantom_pair(&mut rng, &SynthOptions::new(32, 1.0), "p").is_err());
    }
}
