//! PSNR, SSIM and residual-noise statistics.

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;
use crate::wavelet::{dwt2, Wavelet};

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Maps `ld` onto `[0, 1]` and applies the same affine map to `others`
/// (no clamping).
pub fn metric_normalize(ld: &Tensor, others: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
    let (lo, hi) = (ld.min(), ld.max());
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(contract_err!("cannot normalize against a constant image"));
    }
    let f = |t: &Tensor| t.map(|v| (v - lo) / range);
    Ok((f(ld), others.iter().map(|t| f(t)).collect()))
}

fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    let d = x.sub(y)?;
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.numel() as f64)
}

/// `20·log10(max(x) / RMSE(x, y))` with `x` the reference; `+∞` when equal.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    let e = mse(x, y)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (x.max() / e.sqrt()).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) and dynamic range 1.
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.expect_same_shape(y)?;
    let (h, w, c) = x.hwc()?;
    if c != 1 {
        return Err(contract_err!("ssim expects a single-channel image"));
    }
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let (xd, yd) = (x.data(), y.data());
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, _, _) = filter_valid(xd, h, w, &k);
    let (my, _, _) = filter_valid(yd, h, w, &k);
    let (mxx, _, _) = filter_valid(&prod(xd, xd), h, w, &k);
    let (myy, _, _) = filter_valid(&prod(yd, yd), h, w, &k);
    let (mxy, _, _) = filter_valid(&prod(xd, yd), h, w, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Population standard deviation of `image − reference`.
pub fn noise_std(image: &Tensor, reference: &Tensor) -> Result<f64> {
    let d = image.sub(reference)?;
    let m = d.mean();
    Ok((d.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.numel() as f64).sqrt())
}

/// Reference-free noise level: median absolute finest-scale Haar diagonal
/// coefficient divided by 0.6745.
pub fn estimate_noise_sigma(image: &Tensor) -> Result<f64> {
    let p = dwt2(image, 1, Wavelet::Haar)?;
    let mut mags: Vec<f64> = p.details[0].hh.data().iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    let median = if n % 2 == 1 { mags[n / 2] } else { 0.5 * (mags[n / 2 - 1] + mags[n / 2]) };
    Ok(median / 0.6745)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub noise_std: f64,
}

/// Scores `output` against `clean` after normalizing both with the
/// range of `lowdose`. Noise std is reported in the input's units.
pub fn score_image(id: &str, lowdose: &Tensor, clean: &Tensor, output: &Tensor) -> Result<ImageScores> {
    let (_, n) = metric_normalize(lowdose, &[clean, output])?;
    Ok(ImageScores { id: id.into(), psnr: psnr(&n[0], &n[1])?, ssim: ssim(&n[0], &n[1])?, noise_std: noise_std(output, clean)? })
}

/// Per-image rows plus their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageScores>,
    pub config: String,
}

impl EvalReport {
    fn mean_of(&self, f: impl Fn(&ImageScores) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean_of(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean_of(|r| r.ssim)
    }

    pub fn mean_noise_std(&self) -> f64 {
        self.mean_of(|r| r.noise_std)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpsnr_db\tssim\tnoise_std\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\n", r.id, r.psnr, r.ssim, r.noise_std));
        }
        out.push_str(&format!("mean\t{:.6}\t{:.6}\t{:.6}\n", self.mean_psnr(), self.mean_ssim(), self.mean_noise_std()));
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "images = {}\nmean_psnr_db = {}\nmean_ssim = {}\nmean_noise_std = {}\n",
            self.rows.len(),
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_noise_std()
        );
        for line in self.config.lines() {
            out.push_str(&format!("config.{line}\n"));
        }
        out
    }
}
