use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::Domain;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "id\tdomain\tpath\tnoise_sigma\tsplit\tpair";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Option<Domain>,
    /// Relative to the dataset directory.
    pub path: String,
    pub noise_sigma: f64,
    pub split: Split,
    /// Index of the clean/noisy pair the record came from.
    pub pair: usize,
}

/// Tab-separated dataset listing; untagged records use `-` as domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for e in &self.entries {
            let domain = e.domain.map_or("-".to_string(), |d| d.to_string());
            out.push_str(&format!("{}\t{domain}\t{}\t{}\t{}\t{}\n", e.id, e.path, e.noise_sigma, e.split, e.pair));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Format("manifest header missing".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("manifest line {}: malformed", n + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                domain: if f[1] == "-" { None } else { Some(f[1].parse()?) },
                path: f[2].to_string(),
                noise_sigma: f[3].parse().map_err(|_| bad())?,
                split: f[4].parse()?,
                pair: f[5].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = Manifest {
            entries: vec![
                ManifestEntry {
                    id: "train0000-ld".into(),
                    domain: Some(Domain::LowDose),
                    path: "images/train0000-ld.img".into(),
                    noise_sigma: 40.5,
                    split: Split::Train,
                    pair: 0,
                },
                ManifestEntry { id: "x".into(), domain: None, path: "x.img".into(), noise_sigma: 0.0, split: Split::Eval, pair: 3 },
            ],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Manifest::parse("").is_err());
        assert!(Manifest::parse(&format!("{HEADER}\na\tb\n")).is_err());
        assert!(Manifest::parse(&format!("{HEADER}\na\tmid_dose\tp\t0\ttrain\t0\n")).is_err());
    }
}
