//! Multi-level separable 2D discrete wavelet transform with periodic
//! extension, and the high-frequency residual split built on it.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEVELS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Wavelet {
    #[default]
    Haar,
    /// Four-tap Daubechies filter pair.
    Db4,
}

impl Wavelet {
    fn lowpass(self) -> &'static [f64] {
        const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;
        // (1 ± √3) / (4√2), (3 ± √3) / (4√2)
        const D4: [f64; 4] = [
            0.482_962_913_144_534_1,
            0.836_516_303_737_807_9,
            0.224_143_868_042_013_4,
            -0.129_409_522_551_260_4,
        ];
        match self {
            Wavelet::Haar => &[S2, S2],
            Wavelet::Db4 => &D4,
        }
    }

    /// Quadrature mirror of the low-pass filter: `g[i] = (-1)^i h[L-1-i]`.
    fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l).map(|i| if i % 2 == 0 { h[l - 1 - i] } else { -h[l - 1 - i] }).collect()
    }
}

impl fmt::Display for Wavelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wavelet::Haar => "haar",
            Wavelet::Db4 => "db4",
        })
    }
}

impl FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(Wavelet::Haar),
            "db4" => Ok(Wavelet::Db4),
            other => Err(Error::Config(format!("unknown wavelet family '{other}' (haar|db4)"))),
        }
    }
}

/// A 2D plane stored row-major.
#[derive(Clone, Debug, PartialEq)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0.0; h * w] }
    }

    fn into_tensor(self) -> Tensor {
        Tensor::new([self.h, self.w], self.data).expect("plane dims match data")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != 1 {
            return Err(dim_err!("wavelet transform needs a single-channel image, got {} channels", c));
        }
        Ok(Self { h, w, data: t.data().to_vec() })
    }
}

/// The three detail bands of one decomposition level. The first letter names
/// the filter applied along rows (horizontal), the second along columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub wavelet: Wavelet,
    pub levels: usize,
    /// Coarsest approximation band.
    pub ll: Tensor,
    /// `details[0]` is the finest level.
    pub details: Vec<DetailBands>,
    /// Size of the image before symmetric padding, when padding was applied.
    pub source_shape: Vec<usize>,
    padded: (usize, usize),
}

impl WaveletPyramid {
    /// Sum of squares over all coefficients.
    pub fn energy(&self) -> f64 {
        let sq = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.ll) + self.details.iter().map(|d| sq(&d.lh) + sq(&d.hl) + sq(&d.hh)).sum::<f64>()
    }

    pub fn with_zeroed_ll(mut self) -> Self {
        self.ll = Tensor::zeros(self.ll.shape().to_vec());
        self
    }

    pub fn with_zeroed_details(mut self) -> Self {
        for d in &mut self.details {
            d.lh = Tensor::zeros(d.lh.shape().to_vec());
            d.hl = Tensor::zeros(d.hl.shape().to_vec());
            d.hh = Tensor::zeros(d.hh.shape().to_vec());
        }
        self
    }

    /// Coefficient-wise `self + other`; both must share layout.
    pub fn add(&self, other: &WaveletPyramid) -> Result<WaveletPyramid> {
        if self.levels != other.levels || self.wavelet != other.wavelet || self.padded != other.padded {
            return Err(contract_err!("pyramids differ in layout"));
        }
        let details = self
            .details
            .iter()
            .zip(&other.details)
            .map(|(a, b)| Ok(DetailBands { lh: a.lh.add(&b.lh)?, hl: a.hl.add(&b.hl)?, hh: a.hh.add(&b.hh)? }))
            .collect::<Result<_>>()?;
        Ok(WaveletPyramid { ll: self.ll.add(&other.ll)?, details, ..self.clone() })
    }
}

fn analyze_1d(src: &[f64], lo: &[f64], hi: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let n = src.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            let v = src[(2 * k + i) % n];
            a += l * v;
            d += h * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

fn synthesize_1d(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64], dst: &mut [f64]) {
    let n = dst.len();
    dst.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..n / 2 {
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            dst[(2 * k + i) % n] += l * approx[k] + h * detail[k];
        }
    }
}

/// One analysis level: returns (LL, LH, HL, HH).
fn analyze_2d(p: &Plane, wavelet: Wavelet) -> (Plane, Plane, Plane, Plane) {
    let lo = wavelet.lowpass();
    let hi = wavelet.highpass();
    let (h, w) = (p.h, p.w);
    let (h2, w2) = (h / 2, w / 2);
    // rows
    let mut row_lo = Plane::zeros(h, w2);
    let mut row_hi = Plane::zeros(h, w2);
    for y in 0..h {
        analyze_1d(
            &p.data[y * w..(y + 1) * w],
            lo,
            &hi,
            &mut row_lo.data[y * w2..(y + 1) * w2],
            &mut row_hi.data[y * w2..(y + 1) * w2],
        );
    }
    // columns
    let columns = |src: &Plane| {
        let mut a = Plane::zeros(h2, w2);
        let mut d = Plane::zeros(h2, w2);
        let mut col = vec![0.0; h];
        let (mut ca, mut cd) = (vec![0.0; h2], vec![0.0; h2]);
        for x in 0..w2 {
            for y in 0..h {
                col[y] = src.data[y * w2 + x];
            }
            analyze_1d(&col, lo, &hi, &mut ca, &mut cd);
            for y in 0..h2 {
                a.data[y * w2 + x] = ca[y];
                d.data[y * w2 + x] = cd[y];
            }
        }
        (a, d)
    };
    let (ll, lh) = columns(&row_lo);
    let (hl, hh) = columns(&row_hi);
    (ll, lh, hl, hh)
}

fn synthesize_2d(ll: &Plane, lh: &Plane, hl: &Plane, hh: &Plane, wavelet: Wavelet) -> Plane {
    let lo = wavelet.lowpass();
    let hi = wavelet.highpass();
    let (h2, w2) = (ll.h, ll.w);
    let (h, w) = (2 * h2, 2 * w2);
    let columns = |a: &Plane, d: &Plane| {
        let mut out = Plane::zeros(h, w2);
        let (mut ca, mut cd, mut col) = (vec![0.0; h2], vec![0.0; h2], vec![0.0; h]);
        for x in 0..w2 {
            for y in 0..h2 {
                ca[y] = a.data[y * w2 + x];
                cd[y] = d.data[y * w2 + x];
            }
            synthesize_1d(&ca, &cd, lo, &hi, &mut col);
            for y in 0..h {
                out.data[y * w2 + x] = col[y];
            }
        }
        out
    };
    let row_lo = columns(ll, lh);
    let row_hi = columns(hl, hh);
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        synthesize_1d(
            &row_lo.data[y * w2..(y + 1) * w2],
            &row_hi.data[y * w2..(y + 1) * w2],
            lo,
            &hi,
            &mut out.data[y * w..(y + 1) * w],
        );
    }
    out
}

/// Half-sample symmetric extension at the bottom and right edges.
fn symmetric_pad(p: &Plane, h: usize, w: usize) -> Plane {
    let mirror = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        let sy = mirror(y, p.h);
        for x in 0..w {
            out.data[y * w + x] = p.data[sy * p.w + mirror(x, p.w)];
        }
    }
    out
}

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(contract_err!("wavelet levels must be at least 1"));
    }
    let block = 1usize.checked_shl(levels as u32).unwrap_or(usize::MAX);
    if block > h || block > w {
        return Err(contract_err!("{levels} wavelet levels need an image of at least {block}x{block}, got {h}x{w}"));
    }
    Ok(())
}

/// Decomposes an `[H, W]` (or `[H, W, 1]`) image. Sizes that are not a
/// multiple of `2^levels` are symmetric-padded first; the pyramid remembers
/// the original size so [`idwt2`] can crop back.
pub fn dwt2(image: &Tensor, levels: usize, wavelet: Wavelet) -> Result<WaveletPyramid> {
    let plane = Plane::from_tensor(image)?;
    check_levels(plane.h, plane.w, levels)?;
    let block = 1usize << levels;
    let (ph, pw) = (plane.h.next_multiple_of(block), plane.w.next_multiple_of(block));
    let mut current = if (ph, pw) == (plane.h, plane.w) { plane } else { symmetric_pad(&plane, ph, pw) };
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (ll, lh, hl, hh) = analyze_2d(&current, wavelet);
        details.push(DetailBands { lh: lh.into_tensor(), hl: hl.into_tensor(), hh: hh.into_tensor() });
        current = ll;
    }
    Ok(WaveletPyramid {
        wavelet,
        levels,
        ll: current.into_tensor(),
        details,
        source_shape: image.shape().to_vec(),
        padded: (ph, pw),
    })
}

/// Inverse of [`dwt2`], cropped to the source shape.
pub fn idwt2(p: &WaveletPyramid) -> Result<Tensor> {
    if p.details.len() != p.levels {
        return Err(contract_err!("pyramid declares {} levels but holds {}", p.levels, p.details.len()));
    }
    let mut current = Plane::from_tensor(&p.ll)?;
    for (lvl, bands) in p.details.iter().enumerate().rev() {
        let expect = [current.h, current.w];
        for band in [&bands.lh, &bands.hl, &bands.hh] {
            if band.shape() != expect {
                return Err(contract_err!(
                    "level {} band shape {:?} does not match approximation {:?}",
                    lvl + 1,
                    band.shape(),
                    expect
                ));
            }
        }
        current = synthesize_2d(
            &current,
            &Plane::from_tensor(&bands.lh)?,
            &Plane::from_tensor(&bands.hl)?,
            &Plane::from_tensor(&bands.hh)?,
            p.wavelet,
        );
    }
    if (current.h, current.w) != p.padded {
        return Err(contract_err!("reconstruction is {}x{}, expected {:?}", current.h, current.w, p.padded));
    }
    let (h, w, _) = Tensor::zeros(p.source_shape.clone()).hwc()?;
    let data = if (h, w) == p.padded {
        current.data
    } else {
        (0..h).flat_map(|y| current.data[y * current.w..y * current.w + w].to_vec()).collect()
    };
    Tensor::new(p.source_shape.clone(), data)
}

/// The image with its coarsest approximation band removed.
pub fn highfreq_extract(image: &Tensor, levels: usize, wavelet: Wavelet) -> Result<Tensor> {
    idwt2(&dwt2(image, levels, wavelet)?.with_zeroed_ll())
}

/// The complement of [`highfreq_extract`]: only the coarsest band survives.
pub fn lowfreq_extract(image: &Tensor, levels: usize, wavelet: Wavelet) -> Result<Tensor> {
    idwt2(&dwt2(image, levels, wavelet)?.with_zeroed_details())
}

/// `lowdose − (hf_in − hf_denoised)`: removes the noise estimated in the
/// high-frequency domain from the original image.
pub fn recompose_denoised(lowdose: &Tensor, hf_in: &Tensor, hf_denoised: &Tensor) -> Result<Tensor> {
    let noise = hf_in.sub(hf_denoised)?;
    lowdose.sub(&noise)
}
