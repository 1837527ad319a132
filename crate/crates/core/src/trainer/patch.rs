use rand::Rng;

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// Random `patch × patch` crop of an `[H, W]` image, optionally flipped along
/// each axis with probability 0.5. Returns `[patch, patch, 1]`.
pub fn crop_patch<R: Rng + ?Sized>(image: &Tensor, patch: usize, flips: bool, rng: &mut R) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    if c != 1 {
        return Err(contract_err!("patches are cut from single-channel images"));
    }
    if patch == 0 || h < patch || w < patch {
        return Err(contract_err!("image {h}x{w} is smaller than the {patch}x{patch} patch"));
    }
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    let (flip_v, flip_h) = if flips { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
    let src = image.data();
    let data = (0..patch * patch)
        .map(|i| {
            let (mut y, mut x) = (i / patch, i % patch);
            if flip_v {
                y = patch - 1 - y;
            }
            if flip_h {
                x = patch - 1 - x;
            }
            src[(top + y) * w + left + x]
        })
        .collect();
    Tensor::new([patch, patch, 1], data)
}

/// Independent crops from a random image of each pool.
pub fn sample_patch_pair<R: Rng + ?Sized>(
    pool_x: &[Tensor],
    pool_y: &[Tensor],
    patch: usize,
    flips: bool,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    if pool_x.is_empty() || pool_y.is_empty() {
        return Err(contract_err!("both pools must be non-empty"));
    }
    let x = &pool_x[rng.random_range(0..pool_x.len())];
    let y = &pool_y[rng.random_range(0..pool_y.len())];
    Ok((crop_patch(x, patch, flips, rng)?, crop_patch(y, patch, flips, rng)?))
}
