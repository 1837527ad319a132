//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ADASWCKP"
//! version      u32      1
//! reserved     u32      0
//! config_len   u32      length of the config block in bytes
//! config       UTF-8    "key = value" lines
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32, name (UTF-8)
//!   rank       u32, dims (u64 each)
//!   data       f64 × product(dims), row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ADASWCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format_err("truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| format_err("truncated checkpoint"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| format_err("truncated checkpoint"))?;
    String::from_utf8(buf).map_err(|_| format_err("checkpoint string is not UTF-8"))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut bytes = Vec::with_capacity(t.numel() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("partial");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_filtered(path, |_| true).map(|(c, _)| c)
    }

    /// Loads only tensors whose name satisfies `keep`; the rest are skipped
    /// without being decoded. Also returns the names that were loaded.
    pub fn load_filtered(path: impl AsRef<Path>, keep: impl Fn(&str) -> bool) -> Result<(Self, Vec<String>)> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_filtered(&mut r, keep)
    }

    pub fn read_filtered<R: Read + Seek>(r: &mut R, keep: impl Fn(&str) -> bool) -> Result<(Self, Vec<String>)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| format_err("file too short for a checkpoint header"))?;
        if &magic != MAGIC {
            return Err(format_err("bad checkpoint magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        read_u32(r)?;
        let config_len = read_u32(r)? as usize;
        let config = read_string(r, config_len)?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::new();
        let mut loaded = Vec::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = read_string(r, name_len)?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if keep(&name) {
                let mut bytes = vec![0u8; numel * 8];
                r.read_exact(&mut bytes).map_err(|_| format_err("truncated tensor data"))?;
                let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                loaded.push(name.clone());
                tensors.push((name, Tensor::new(shape, data)?));
            } else {
                r.seek(SeekFrom::Current((numel * 8) as i64))?;
            }
        }
        Ok((Self { config, tensors }, loaded))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint { config: "a = 1\nb = two\n".into(), ..Default::default() };
        c.push("gen/w", Tensor::from_fn([2, 3], |i| i as f64 * 0.1 - 0.2));
        c.push("codegen/w", Tensor::from_vec(vec![f64::MIN_POSITIVE, -0.0, 1e300]));
        c.push("scalar", Tensor::scalar(7.0));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let (back, names) = Checkpoint::read_filtered(&mut Cursor::new(&buf), |_| true).unwrap();
        assert_eq!(back, c);
        assert_eq!(names.len(), 3);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.get("codegen/w").unwrap()), bits(c.get("codegen/w").unwrap()));
    }

    #[test]
    fn filtered_load_skips_tensors() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let (back, names) = Checkpoint::read_filtered(&mut Cursor::new(&buf), |n| !n.starts_with("codegen/")).unwrap();
        assert_eq!(names, vec!["gen/w".to_string(), "scalar".to_string()]);
        assert!(back.get("codegen/w").is_none());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::read_filtered(&mut Cursor::new(Vec::new()), |_| true), Err(Error::Format(_))));
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read_filtered(&mut Cursor::new(&buf), |_| true), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(Checkpoint::read_filtered(&mut Cursor::new(&buf), |_| true), Err(Error::Format(_))));
    }
}
