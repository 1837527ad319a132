//! Flat `key = value` run configuration shared by every command.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{DiscConfig, GeneratorConfig};
use crate::objectives::{GanMode, LossWeights};
use crate::wavelet::Wavelet;

/// Which translator the trainer optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelKind {
    /// One generator switched by its AdaIN code, plus the code generator.
    #[default]
    Switchable,
    /// Two independent generators, both with the constant code.
    TwoGenerator,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Switchable => "switchable",
            ModelKind::TwoGenerator => "two-generator",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "switchable" => Ok(ModelKind::Switchable),
            "two-generator" => Ok(ModelKind::TwoGenerator),
            other => Err(Error::Config(format!("unknown model '{other}' (switchable|two-generator)"))),
        }
    }
}

/// Comma-separated list of numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl<T: FromStr> FromStr for List<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| Error::Config(format!("bad list entry '{p}'"))))
            .collect::<Result<Vec<_>>>()
            .map(List)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])+ $key:ident : $ty:ty = $default:expr; )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])+ pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            /// Every accepted key with its description.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[
                $( (stringify!($key), concat!($($doc),+)), )*
            ];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let key = key.replace('-', "_");
                match key.as_str() {
                    $( stringify!($key) => self.$key = parse_value(&key, value.trim())?, )*
                    other => return Err(Error::Config(format!("unknown config key '{other}'"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($key) => Some(self.$key.to_string()), )*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    /// Master seed for data generation, initialization and sampling.
    seed: u64 = 7;
    /// Dataset directory written by `synth` and read by `train`/`eval`.
    data_dir: String = "data".into();
    /// Side length of synthetic images.
    image_size: usize = 64;
    /// Number of synthetic training pairs; pools take alternating halves.
    train_pairs: usize = 200;
    /// Number of paired evaluation images.
    eval_pairs: usize = 20;
    /// Noise standard deviation in HU.
    noise_sigma: f64 = 60.0;
    /// Standard deviation (HU) of an added low-frequency perturbation.
    ll_perturbation: f64 = 0.0;
    /// Translator: switchable or two-generator.
    model: ModelKind = ModelKind::Switchable;
    /// Generator channels at the first encoder stage.
    base_channels: usize = 16;
    /// Discriminator channels at its first layer.
    disc_channels: usize = 16;
    /// Concatenate encoder features taken before AdaIN into the decoder.
    skip_pre_adain: bool = true;
    /// Generator output is input plus the 1x1 projection.
    residual_output: bool = true;
    /// Wavelet family: haar or db4.
    wavelet: Wavelet = Wavelet::Haar;
    /// Decomposition depth for the high-frequency split.
    wavelet_levels: usize = 6;
    /// Adversarial form: least-squares or l1.
    gan_mode: GanMode = GanMode::LeastSquares;
    /// Cycle-consistency weight.
    lambda_cyc: f64 = 10.0;
    /// Identity weight.
    lambda_id: f64 = 5.0;
    /// Adam step size for all networks.
    learning_rate: f64 = 5e-4;
    /// Training epochs.
    epochs: usize = 30;
    /// Patches per domain per step.
    batch_size: usize = 1;
    /// Side length of training patches. Whole desk images by default.
    patch_size: usize = 64;
    /// Random horizontal and vertical flips of training patches.
    flips: bool = true;
    /// Steps per epoch; 0 means one pass over the larger pool.
    steps_per_epoch: usize = 50;
    /// Stop after this many epochs without a lower mean total loss; 0 disables.
    early_stop_patience: usize = 0;
    /// Number of most recent epoch checkpoints to keep; 0 keeps all.
    checkpoint_keep: usize = 0;
    /// Output directory for checkpoints, logs and reports.
    out_dir: String = "runs/desk".into();
    /// Checkpoint file used by denoise, switch-demo and eval.
    checkpoint: String = String::new();
    /// Input image file.
    input: String = String::new();
    /// Output image file.
    output: String = String::new();
    /// Display window center (HU) for greyscale exports.
    window_center: f64 = 0.0;
    /// Display window width (HU) for greyscale exports.
    window_width: f64 = 1000.0;
    /// Training-set fractions compared by the ablation.
    ablate_fractions: List<f64> = List(vec![1.0, 0.5, 0.1]);
    /// Seeds used by the ablation.
    ablate_seeds: List<u64> = List(vec![1, 2, 3]);
    /// Fixed optimizer steps per ablation cell.
    ablate_steps: usize = 600;
}

impl RunConfig {
    /// Approximate full-scale settings: 64-channel networks, 128×128 patches.
    pub fn reference() -> Self {
        Self {
            image_size: 128,
            train_pairs: 2000,
            base_channels: 64,
            disc_channels: 64,
            patch_size: 128,
            steps_per_epoch: 0,
            epochs: 80,
            out_dir: "runs/reference".into(),
            ..Self::default()
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_into(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.parse_into(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Every key in declaration order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in Self::KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).unwrap_or_default()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let multiple = self.generator_config().size_multiple();
        if self.image_size < multiple || self.image_size < 1 << self.wavelet_levels.min(30) {
            return fail(format!("image_size {} too small for the network or wavelet depth", self.image_size));
        }
        if self.patch_size == 0 || self.patch_size % multiple != 0 || self.patch_size > self.image_size {
            return fail(format!("patch_size must be a multiple of {multiple} no larger than image_size"));
        }
        if self.wavelet_levels == 0 {
            return fail("wavelet_levels must be at least 1".into());
        }
        if self.base_channels == 0 || self.disc_channels == 0 || self.batch_size == 0 {
            return fail("channel counts and batch_size must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.ll_perturbation >= 0.0) {
            return fail("noise levels must be non-negative".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative".into());
        }
        if !(self.window_width > 0.0) {
            return fail("window_width must be positive".into());
        }
        if self.ablate_fractions.0.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return fail("ablate_fractions must lie in (0, 1]".into());
        }
        self.loss_weights().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.base_channels,
            skip_pre_adain: self.skip_pre_adain,
            residual: self.residual_output,
            ..GeneratorConfig::default()
        }
    }

    pub fn disc_config(&self) -> DiscConfig {
        DiscConfig { base_channels: self.disc_channels, ..DiscConfig::default() }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_cyc, self.lambda_id, self.gan_mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::reference();
        c.gan_mode = GanMode::L1;
        c.model = ModelKind::TwoGenerator;
        c.learning_rate = 2e-3;
        c.ablate_fractions = List(vec![1.0, 0.25]);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("epochs = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("epochs 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("wavelet = sym8"), Err(Error::Config(_))));
    }

    #[test]
    fn comments_blank_lines_and_dashes() {
        let c = RunConfig::parse("# desk\n\nlambda-cyc = 0.5  # chest\nlambda_id=0.1\n").unwrap();
        assert_eq!((c.lambda_cyc, c.lambda_id), (0.5, 0.1));
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::reference().validate().is_ok());
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.patch_size = 24));
        assert!(bad(|c| c.patch_size = 128));
        assert!(bad(|c| c.wavelet_levels = 7));
        assert!(bad(|c| c.lambda_id = -1.0));
        assert!(bad(|c| c.ablate_fractions = List(vec![0.0])));
    }
}
