//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`; numbers as
//! `Float64Array`s.

use adaswitch::dataio::{synth_phantom_pair, SynthOptions, Window};
use adaswitch::layers::adain;
use adaswitch::metrics::{metric_normalize, noise_std, psnr, ssim};
use adaswitch::tensor::channel_stats;
use adaswitch::wavelet::{highfreq_extract, lowfreq_extract, Wavelet};
use adaswitch::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: adaswitch::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(t: &Tensor, window: Window) -> Vec<u8> {
    t.data().iter().flat_map(|&v| {
        let g = window.to_u8(v);
        [g, g, g, 255]
    }).collect()
}

/// Symmetric window sized to the largest magnitude, for signed images.
fn signed_window(t: &Tensor) -> Window {
    let m = t.max_abs().max(1e-12);
    Window::from_range(-m, m).expect("positive width")
}

/// One synthetic phantom pair and its wavelet split.
#[wasm_bindgen]
pub struct Phantom {
    size: usize,
    clean: Tensor,
    noisy: Tensor,
    levels: usize,
    window: Window,
}

#[wasm_bindgen]
impl Phantom {
    /// `size` must be a power of two of at least `2^levels`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize, noise_sigma: f64, levels: usize) -> Result<Phantom, JsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = SynthOptions { levels, ..SynthOptions::new(size, noise_sigma) };
        let (clean, noisy) = synth_phantom_pair(&mut rng, &opts, "demo").map_err(js_err)?;
        Ok(Phantom {
            size,
            clean: clean.pixels,
            noisy: noisy.pixels,
            levels,
            window: Window::new(0.0, 1000.0).map_err(js_err)?,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Display window in HU for the intensity views.
    pub fn set_window(&mut self, center: f64, width: f64) -> Result<(), JsError> {
        self.window = Window::new(center, width).map_err(js_err)?;
        Ok(())
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        rgba(&self.clean, self.window)
    }

    pub fn noisy_rgba(&self) -> Vec<u8> {
        rgba(&self.noisy, self.window)
    }

    fn split(&self, image: &Tensor, high: bool) -> Result<Tensor, JsError> {
        let f = if high { highfreq_extract } else { lowfreq_extract };
        f(image, self.levels, Wavelet::Haar).map_err(js_err)
    }

    /// Detail bands of the noisy image (LL zeroed), contrast-stretched.
    pub fn highfreq_rgba(&self) -> Result<Vec<u8>, JsError> {
        let hf = self.split(&self.noisy, true)?;
        Ok(rgba(&hf, signed_window(&hf)))
    }

    /// Coarsest approximation of the noisy image.
    pub fn lowfreq_rgba(&self) -> Result<Vec<u8>, JsError> {
        Ok(rgba(&self.split(&self.noisy, false)?, self.window))
    }

    /// `[psnr_db, ssim, noise_std_hu, lowfreq_noise_std_hu]` of noisy against clean.
    pub fn metrics(&self) -> Result<Vec<f64>, JsError> {
        let (ld, others) = metric_normalize(&self.noisy, &[&self.clean]).map_err(js_err)?;
        let clean = &others[0];
        let low = noise_std(&self.split(&self.noisy, false)?, &self.split(&self.clean, false)?).map_err(js_err)?;
        Ok(vec![
            psnr(clean, &ld).map_err(js_err)?,
            ssim(clean, &ld).map_err(js_err)?,
            noise_std(&self.noisy, &self.clean).map_err(js_err)?,
            low,
        ])
    }

    /// AdaIN of the noisy high-frequency image to the given target mean and
    /// standard deviation, as RGBA on a fixed signed window of ±4 target units.
    pub fn adain_rgba(&self, mean: f64, std: f64) -> Result<Vec<u8>, JsError> {
        let z = self.adain(mean, std)?;
        let w = (4.0 * std).max(mean.abs() + 1e-6);
        Ok(rgba(&z, Window::from_range(-w, w).map_err(js_err)?))
    }

    /// `[input_mean, input_std, output_mean, output_std]` of the AdaIN map.
    pub fn adain_stats(&self, mean: f64, std: f64) -> Result<Vec<f64>, JsError> {
        let hf = self.split(&self.noisy, true)?;
        let z = self.adain(mean, std)?;
        let stats = |t: &Tensor| -> Result<(f64, f64), JsError> {
            let (m, v) = channel_stats(&t.reshape([self.size, self.size, 1]).map_err(js_err)?).map_err(js_err)?;
            Ok((m.data()[0], v.data()[0]))
        };
        let (a, b) = stats(&hf)?;
        let (c, d) = stats(&z)?;
        Ok(vec![a, b, c, d])
    }

    fn adain(&self, mean: f64, std: f64) -> Result<Tensor, JsError> {
        let hf = self.split(&self.noisy, true)?;
        let mut tape = Tape::new();
        let x = tape.constant(hf.reshape([self.size, self.size, 1]).map_err(js_err)?);
        let m = tape.constant(Tensor::from_vec(vec![mean]));
        let v = tape.constant(Tensor::from_vec(vec![std * std]));
        let z = adain(&mut tape, x, m, v, 0.0).map_err(js_err)?;
        tape.value(z).reshape([self.size, self.size]).map_err(js_err)
    }
}
