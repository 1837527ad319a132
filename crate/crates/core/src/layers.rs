//! Network layers shared by the generator, the code generator and the
//! discriminators. All feature maps are `[H, W, C]`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Default stabilizer for the AdaIN denominator.
pub const ADAIN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2DParams {
    /// `[kh, kw, c_in, c_out]`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2DParams {
    pub fn glorot<R: Rng + ?Sized>(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(stride == 1 || stride == 2) {
            return Err(contract_err!("stride must be 1 or 2, got {stride}"));
        }
        Ok(Self {
            kernel: glorot_uniform_init(&[k, k, c_in, c_out], rng)?,
            bias: Tensor::zeros([c_out]),
            stride,
            padding: Padding::Same,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.numel() + self.bias.numel()
    }

    /// Convenience forward pass with the parameters recorded as tape leaves.
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let k = tape.leaf(self.kernel.clone());
        let b = tape.leaf(self.bias.clone());
        conv2d(tape, x, k, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Self { weight: glorot_uniform_init(&[n_in, n_out], rng)?, bias: Tensor::zeros([n_out]) })
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Uniform samples on `[-L, L]` with `L = sqrt(6 / (fan_in + fan_out))`.
///
/// Convolution kernels `[kh, kw, c_in, c_out]` use the receptive field times
/// channel counts as fans; dense weights `[in, out]` use their two sizes.
pub fn glorot_uniform_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let (fan_in, fan_out) = match *shape {
        [kh, kw, ci, co] => (kh * kw * ci, kh * kw * co),
        [i, o] => (i, o),
        [n] => (n, n),
        _ => return Err(contract_err!("no fan definition for shape {:?}", shape)),
    };
    if fan_in + fan_out == 0 {
        return Err(contract_err!("zero-sized shape {:?}", shape));
    }
    let limit = glorot_limit(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| contract_err!("{e}"))?;
    Ok(Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng)))
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    h: usize,
    w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let [h, w, c_in] = *x else {
            return Err(dim_err!("conv2d input must be [H, W, C], got {:?}", x));
        };
        let [kh, kw, kc, _] = *kernel else {
            return Err(dim_err!("conv2d kernel must be [kh, kw, Cin, Cout], got {:?}", kernel));
        };
        if kc != c_in {
            return Err(dim_err!("conv2d kernel expects {} input channels, input has {}", kc, c_in));
        }
        if stride == 0 {
            return Err(contract_err!("stride must be positive"));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(dim_err!("valid conv needs input at least {}x{}", kh, kw));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self { h, w, c_in, kh, kw, stride, pad_top, pad_left, oh, ow })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Calls `f(col_offset, input_offset)` for each in-bounds tap of output row `r`.
    #[inline]
    fn for_taps(&self, r: usize, mut f: impl FnMut(usize, usize)) {
        let (oy, ox) = (r / self.ow, r % self.ow);
        for ky in 0..self.kh {
            let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            for kx in 0..self.kw {
                let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                if ix < 0 || ix >= self.w as isize {
                    continue;
                }
                let col = (ky * self.kw + kx) * self.c_in;
                let src = (iy as usize * self.w + ix as usize) * self.c_in;
                f(col, src);
            }
        }
    }

    /// Rows `[r0, r1)` of the im2col matrix, written into `cols`.
    fn im2col_rows(&self, x: &[f64], r0: usize, r1: usize, cols: &mut Vec<f64>) {
        let k = self.patch_len();
        cols.clear();
        cols.resize((r1 - r0) * k, 0.0);
        for (i, row) in cols.chunks_exact_mut(k).enumerate() {
            self.for_taps(r0 + i, |col, src| {
                row[col..col + self.c_in].copy_from_slice(&x[src..src + self.c_in]);
            });
        }
    }

    /// Scatter-adds im2col rows `[r0, ..)` back onto the input layout.
    fn col2im_rows(&self, cols: &[f64], r0: usize, x: &mut [f64]) {
        let k = self.patch_len();
        for (i, row) in cols.chunks_exact(k).enumerate() {
            self.for_taps(r0 + i, |col, src| {
                for (d, s) in x[src..src + self.c_in].iter_mut().zip(&row[col..col + self.c_in]) {
                    *d += s;
                }
            });
        }
    }

    /// Output-row blocks whose im2col slab stays cache-sized.
    fn row_blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let rows = self.oh * self.ow;
        let step = (IM2COL_BLOCK / self.patch_len()).max(16);
        (0..rows).step_by(step).map(move |r0| (r0, (r0 + step).min(rows)))
    }
}

/// Target im2col slab size in elements (1 MiB of f64).
#[cfg(not(test))]
const IM2COL_BLOCK: usize = 1 << 17;
/// Tiny slabs in tests so small images still span several blocks.
#[cfg(test)]
const IM2COL_BLOCK: usize = 64;

/// `c = a·b + beta·c` for row-major `a: [m, k]`, `b: [k, n]`, with optional
/// transposed reads of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the same dense buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2D cross-correlation plus bias.
pub fn conv2d(tape: &mut Tape, x: Var, kernel: Var, bias: Var, stride: usize, padding: Padding) -> Result<Var> {
    let geo = ConvGeometry::new(tape.shape(x), tape.shape(kernel), stride, padding)?;
    let c_out = tape.shape(kernel)[3];
    if tape.shape(bias) != [c_out] {
        return Err(dim_err!("conv2d bias must be [{}], got {:?}", c_out, tape.shape(bias)));
    }
    let rows = geo.oh * geo.ow;
    let mut out = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(tape.value(bias).data());
    }
    let xv = tape.value(x).data();
    let kv = tape.value(kernel).data();
    if geo.is_pointwise() {
        gemm(rows, geo.c_in, c_out, xv, false, kv, false, 1.0, &mut out);
    } else {
        let k = geo.patch_len();
        let mut cols = Vec::new();
        for (r0, r1) in geo.row_blocks() {
            geo.im2col_rows(xv, r0, r1, &mut cols);
            gemm(r1 - r0, k, c_out, &cols, false, kv, false, 1.0, &mut out[r0 * c_out..r1 * c_out]);
        }
    }
    let value = Tensor::new([geo.oh, geo.ow, c_out], out)?;
    Ok(tape.record(value, vec![x, kernel, bias], ConvBackward { geo, c_out }))
}

struct ConvBackward {
    geo: ConvGeometry,
    c_out: usize,
}

impl Backward for ConvBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let geo = &self.geo;
        let (x, kernel) = (inputs[0], inputs[1]);
        let rows = geo.oh * geo.ow;
        let k = geo.patch_len();
        let g = grad.data();

        let c_out = self.c_out;
        if geo.is_pointwise() {
            let dx = if needs[0] {
                let mut dx = vec![0.0; rows * k];
                gemm(rows, c_out, k, g, false, kernel.data(), true, 0.0, &mut dx);
                Some(Tensor::new(x.shape().to_vec(), dx)?)
            } else {
                None
            };
            let dk = if needs[1] {
                let mut dk = vec![0.0; k * c_out];
                gemm(k, rows, c_out, x.data(), true, g, false, 0.0, &mut dk);
                Some(Tensor::new(kernel.shape().to_vec(), dk)?)
            } else {
                None
            };
            return Ok(vec![dx, dk, self.bias_grad(g, needs[2])]);
        }
        let mut dx = needs[0].then(|| vec![0.0; x.numel()]);
        let mut dk = needs[1].then(|| vec![0.0; k * c_out]);
        let mut cols = Vec::new();
        for (r0, r1) in geo.row_blocks() {
            let gb = &g[r0 * c_out..r1 * c_out];
            if let Some(dx) = dx.as_mut() {
                let mut dcols = vec![0.0; (r1 - r0) * k];
                gemm(r1 - r0, c_out, k, gb, false, kernel.data(), true, 0.0, &mut dcols);
                geo.col2im_rows(&dcols, r0, dx);
            }
            if let Some(dk) = dk.as_mut() {
                geo.im2col_rows(x.data(), r0, r1, &mut cols);
                gemm(k, r1 - r0, c_out, &cols, true, gb, false, 1.0, dk);
            }
        }
        let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
        let dk = dk.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?;
        Ok(vec![dx, dk, self.bias_grad(g, needs[2])])
    }
}

impl ConvBackward {
    fn bias_grad(&self, g: &[f64], needed: bool) -> Option<Tensor> {
        needed.then(|| {
            let mut db = vec![0.0; self.c_out];
            for row in g.chunks_exact(self.c_out) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            Tensor::from_vec(db)
        })
    }
}

// ---------------------------------------------------------------------------
// Upsampling
// ---------------------------------------------------------------------------

/// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
pub fn upsample2x(tape: &mut Tape, x: Var) -> Result<Var> {
    let (h, w, c) = tape.value(x).hwc()?;
    let src = tape.value(x).data();
    let mut out = vec![0.0; 4 * h * w * c];
    for y in 0..2 * h {
        for xx in 0..2 * w {
            let s = ((y / 2) * w + xx / 2) * c;
            let d = (y * 2 * w + xx) * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    let value = Tensor::new([2 * h, 2 * w, c], out)?;
    Ok(tape.record(value, vec![x], Upsample { h, w, c }))
}

struct Upsample {
    h: usize,
    w: usize,
    c: usize,
}

impl Backward for Upsample {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (h, w, c) = (self.h, self.w, self.c);
        let g = grad.data();
        let mut dx = vec![0.0; h * w * c];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let d = ((y / 2) * w + xx / 2) * c;
                let s = (y * 2 * w + xx) * c;
                for (a, b) in dx[d..d + c].iter_mut().zip(&g[s..s + c]) {
                    *a += b;
                }
            }
        }
        Ok(vec![Some(Tensor::new([h, w, c], dx)?)])
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// `x·W + b` for a vector `x: [in]`, `W: [in, out]`.
pub fn dense(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (xs, ws, bs) = (tape.shape(x), tape.shape(weight), tape.shape(bias));
    let [n_in] = *xs else {
        return Err(dim_err!("dense input must be a vector, got {:?}", xs));
    };
    let [w_in, n_out] = *ws else {
        return Err(dim_err!("dense weight must be [in, out], got {:?}", ws));
    };
    if w_in != n_in || bs != [n_out] {
        return Err(dim_err!("dense shapes disagree: x {:?}, W {:?}, b {:?}", xs, ws, bs));
    }
    let mut out = tape.value(bias).data().to_vec();
    gemm(1, n_in, n_out, tape.value(x).data(), false, tape.value(weight).data(), false, 1.0, &mut out);
    let value = Tensor::from_vec(out);
    Ok(tape.record(value, vec![x, weight, bias], DenseBackward { n_in, n_out }))
}

struct DenseBackward {
    n_in: usize,
    n_out: usize,
}

impl Backward for DenseBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; self.n_in];
            gemm(1, self.n_out, self.n_in, g, false, w, true, 0.0, &mut dx);
            Tensor::from_vec(dx)
        });
        let dw = if needs[1] {
            let mut dw = vec![0.0; self.n_in * self.n_out];
            gemm(self.n_in, 1, self.n_out, x, false, g, false, 0.0, &mut dw);
            Some(Tensor::new([self.n_in, self.n_out], dw)?)
        } else {
            None
        };
        let db = needs[2].then(|| grad.clone());
        Ok(vec![dx, dw, db])
    }
}

// ---------------------------------------------------------------------------
// AdaIN
// ---------------------------------------------------------------------------

/// Adaptive instance normalization of each channel to a target mean and
/// variance:
///
/// `z = sqrt(var_t) · (x − μ(x)) / max(σ(x), eps) + mu_t`
///
/// with population statistics over the spatial extent. For any channel whose
/// spread exceeds `eps` this is the exact re-statistics transform; the floor
/// only engages on (near-)constant channels, which then map to `mu_t`.
pub fn adain(tape: &mut Tape, x: Var, mu_t: Var, var_t: Var, eps: f64) -> Result<Var> {
    let (h, w, c) = tape.value(x).hwc()?;
    if tape.shape(x).len() != 3 {
        return Err(dim_err!("adain input must be [H, W, C]"));
    }
    if tape.shape(mu_t) != [c] || tape.shape(var_t) != [c] {
        return Err(dim_err!(
            "adain targets must be [{}], got mean {:?} and variance {:?}",
            c,
            tape.shape(mu_t),
            tape.shape(var_t)
        ));
    }
    if !(eps >= 0.0) {
        return Err(contract_err!("adain eps must be non-negative"));
    }
    if let Some(bad) = tape.value(var_t).data().iter().find(|v| !(**v >= 0.0)) {
        return Err(contract_err!("adain target variance must be non-negative, got {bad}"));
    }
    let (mu, sigma) = crate::tensor::channel_stats(tape.value(x))?;
    let denom: Vec<f64> = sigma.data().iter().map(|&s| s.max(eps)).collect();
    let scale: Vec<f64> = tape
        .value(var_t)
        .data()
        .iter()
        .zip(&denom)
        .map(|(&v, &d)| if d > 0.0 { v.sqrt() / d } else { 0.0 })
        .collect();
    let shift = tape.value(mu_t).data();
    let mut out = tape.value(x).data().to_vec();
    for px in out.chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] = scale[ch] * (px[ch] - mu.data()[ch]) + shift[ch];
        }
    }
    let value = Tensor::new([h, w, c], out)?;
    let op = AdainBackward { mu: mu.into_data(), sigma: sigma.into_data(), denom, eps };
    Ok(tape.record(value, vec![x, mu_t, var_t], op))
}

struct AdainBackward {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    denom: Vec<f64>,
    eps: f64,
}

impl Backward for AdainBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let var_t = inputs[2].data();
        let c = self.mu.len();
        let n = (x.numel() / c) as f64;
        let g = grad.data();

        // Per channel: Σg and Σg·(x−μ).
        let mut sum_g = vec![0.0; c];
        let mut sum_gxc = vec![0.0; c];
        for (px, gp) in x.data().chunks_exact(c).zip(g.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += gp[ch];
                sum_gxc[ch] += gp[ch] * (px[ch] - self.mu[ch]);
            }
        }
        let std_t: Vec<f64> = var_t.iter().map(|v| v.sqrt()).collect();

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; x.numel()];
            for ((d, px), gp) in dx.chunks_exact_mut(c).zip(x.data().chunks_exact(c)).zip(g.chunks_exact(c)) {
                for ch in 0..c {
                    let den = self.denom[ch];
                    if den == 0.0 {
                        continue;
                    }
                    let a = std_t[ch] / den;
                    let mut v = a * (gp[ch] - sum_g[ch] / n);
                    if self.sigma[ch] > self.eps && self.sigma[ch] > 0.0 {
                        let xc = px[ch] - self.mu[ch];
                        v -= a * xc * sum_gxc[ch] / (n * self.sigma[ch] * den);
                    }
                    d[ch] = v;
                }
            }
            Tensor::from_vec(dx).reshape(x.shape().to_vec())
        });
        let dmu = needs[1].then(|| Tensor::from_vec(sum_g.clone()));
        let dvar = needs[2].then(|| {
            Tensor::from_vec(
                (0..c)
                    .map(|ch| {
                        // d sqrt(v)/dv is unbounded at 0; use 0 there, as for ReLU at its kink.
                        if std_t[ch] > 0.0 && self.denom[ch] > 0.0 {
                            sum_gxc[ch] / self.denom[ch] / (2.0 * std_t[ch])
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )
        });
        Ok(vec![dx.transpose()?, dmu, dvar])
    }
}
