//! Raw image files and 8-bit greyscale export.
//!
//! Raw layout, little-endian:
//!
//! ```text
//! magic     8 bytes  "ADASWIMG"
//! version   u32      1
//! reserved  u32      0
//! height    u32
//! width     u32
//! pixels    f64 × height·width, row-major
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ADASWIMG";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_image(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = t.hwc()?;
    if c != 1 {
        return Err(contract_err!("only single-channel images can be stored, got {c} channels"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes to an `[H, W]` tensor.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("image file is {} bytes, shorter than its header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad image magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    if word(8) != VERSION {
        return Err(Error::Format(format!("unsupported image version {}", word(8))));
    }
    let (h, w) = (word(16) as usize, word(20) as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * h * w {
        return Err(Error::Format(format!("expected {} pixel bytes, found {}", 8 * h * w, body.len())));
    }
    let data = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Tensor::new([h, w], data)
}

pub fn write_image(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_image(t)?)?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&std::fs::read(path)?)
}

/// Display window in intensity units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

impl Window {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(contract_err!("window width must be positive"));
        }
        Ok(Self { center, width })
    }

    /// Window covering `[lo, hi]`.
    pub fn from_range(lo: f64, hi: f64) -> Result<Self> {
        Self::new((lo + hi) / 2.0, hi - lo)
    }

    /// Linear map of `[center − width/2, center + width/2]` onto `0..=255`.
    pub fn to_u8(&self, v: f64) -> u8 {
        let lo = self.center - self.width / 2.0;
        let t = (v - lo) / self.width;
        (t * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// Binary PGM (P5) bytes.
pub fn encode_pgm(t: &Tensor, window: Window) -> Result<Vec<u8>> {
    let (h, w, c) = t.hwc()?;
    if c != 1 {
        return Err(contract_err!("greyscale export needs one channel"));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| window.to_u8(v)));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, t: &Tensor, window: Window) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(t, window)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let t = Tensor::from_fn([3, 5], |i| (i as f64 - 7.0) * 1e-3 + if i == 4 { f64::MIN_POSITIVE } else { 0.0 });
        let back = decode_image(&encode_image(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[3, 5]);
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(decode_image(&[]), Err(Error::Format(_))));
        let mut bytes = encode_image(&Tensor::ones([2, 2])).unwrap();
        bytes.pop();
        assert!(matches!(decode_image(&bytes), Err(Error::Format(_))));
        bytes[0] = b'Z';
        assert!(matches!(decode_image(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn ct_display_window() {
        let w = Window::from_range(-500.0, 500.0).unwrap();
        assert_eq!((w.center, w.width), (0.0, 1000.0));
        assert_eq!(w.to_u8(-500.0), 0);
        assert_eq!(w.to_u8(500.0), 255);
        assert_eq!(w.to_u8(-2000.0), 0);
        assert_eq!(w.to_u8(3000.0), 255);
        assert_eq!(w.to_u8(0.0), 128);
    }

    #[test]
    fn pgm_header_and_payload() {
        let t = Tensor::new([1, 2], vec![-500.0, 500.0]).unwrap();
        let bytes = encode_pgm(&t, Window::new(0.0, 1000.0).unwrap()).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 255]);
    }
}
