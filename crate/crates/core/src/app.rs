//! The user-facing workflow: dataset synthesis, training, inference,
//! evaluation, parameter accounting and the data-fraction ablation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelKind, RunConfig};
use crate::dataio::{
    self, denormalize_intensity, normalize_intensity, prepare_pools, read_image, write_image, write_pgm, DatasetPools,
    ImageRecord, Manifest, Window,
};
use crate::error::{Error, Result};
use crate::metrics::{estimate_noise_sigma, noise_std, score_image, EvalReport};
use crate::models::checkpoint::Checkpoint;
use crate::models::{
    code_forward, constant_code, AdaINCode, CodeGenConfig, CodeGenerator, Generator, ModelGraph,
};
use crate::tensor::Tensor;
use crate::trainer::{self, fit, EpochSummary, TrainState, TranslatorModel};
use crate::wavelet::{highfreq_extract, recompose_denoised};

fn require(value: &str, key: &str) -> Result<PathBuf> {
    if value.is_empty() {
        Err(Error::Config(format!("'{key}' must be set for this command")))
    } else {
        Ok(PathBuf::from(value))
    }
}

/// Writes `t` (HU) as a raw image, or as 8-bit greyscale when the path ends in `.pgm`.
pub fn save_image(path: &Path, t: &Tensor, cfg: &RunConfig) -> Result<()> {
    if path.extension().is_some_and(|e| e == "pgm") {
        write_pgm(path, t, Window::new(cfg.window_center, cfg.window_width)?)
    } else {
        write_image(path, t)
    }
}

/// `synth`: writes the synthetic dataset to `data_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let m = dataio::write_dataset(cfg, &cfg.data_dir)?;
    fs::write(Path::new(&cfg.data_dir).join("synth.config"), cfg.to_text())?;
    Ok(m)
}

/// Unpaired high-frequency pools from the dataset in `data_dir`.
pub fn training_pools(cfg: &RunConfig) -> Result<DatasetPools> {
    let records = dataio::load_training_records(&cfg.data_dir)?;
    prepare_pools(&records, cfg.wavelet_levels, cfg.wavelet, cfg.seed)
}

/// `train`: fits on the dataset in `data_dir`, writing into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, resume: bool, on_epoch: impl FnMut(&EpochSummary)) -> Result<TrainState> {
    cfg.validate()?;
    let pools = training_pools(cfg)?;
    fit(cfg, &pools, Path::new(&cfg.out_dir), resume, on_epoch)
}

/// Inference weights: the denoising generator and the configuration it was
/// trained with.
pub struct Denoiser {
    pub config: RunConfig,
    pub generator: Generator,
    /// Names of every tensor read from the checkpoint.
    pub loaded: Vec<String>,
}

/// Loads only the `gen/` tensors of a checkpoint.
pub fn load_denoiser(path: impl AsRef<Path>) -> Result<Denoiser> {
    let (ckpt, loaded) = Checkpoint::load_filtered(path, |n| n.starts_with("gen/"))?;
    let config = RunConfig::parse(&ckpt.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut generator = Generator::build(&config.generator_config(), &mut rng)?;
    generator.params_mut().load_from(|name| ckpt.get(&format!("gen/{name}")))?;
    Ok(Denoiser { config, generator, loaded })
}

impl Denoiser {
    /// normalize → high-frequency split → `G(·; c_x)` → recompose → HU.
    pub fn denoise(&self, lowdose: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        let norm = normalize_intensity(lowdose);
        let hf = highfreq_extract(&norm, cfg.wavelet_levels, cfg.wavelet)?;
        let out = self.to_x(&hf)?;
        Ok(denormalize_intensity(&recompose_denoised(&norm, &hf, &out)?))
    }

    /// `G(hf; c_x)` on an `[H, W]` high-frequency image.
    pub fn to_x(&self, hf: &Tensor) -> Result<Tensor> {
        run_generator(&self.generator, hf, &constant_code(self.generator.config()))
    }
}

fn run_generator(g: &Generator, hf: &Tensor, code: &AdaINCode) -> Result<Tensor> {
    let (h, w, _) = hf.hwc()?;
    g.apply(&hf.reshape([h, w, 1])?, code)?.reshape([h, w])
}

/// `denoise`: reads `input`, writes `output`.
pub fn cmd_denoise(cfg: &RunConfig) -> Result<Tensor> {
    let d = load_denoiser(require(&cfg.checkpoint, "checkpoint")?)?;
    let input = read_image(require(&cfg.input, "input")?)?;
    let out = d.denoise(&input)?;
    if !cfg.output.is_empty() {
        save_image(Path::new(&cfg.output), &out, cfg)?;
    }
    Ok(out)
}

/// Both directions of a trained switchable generator.
pub struct Switch {
    pub config: RunConfig,
    pub generator: Generator,
    pub code_y: AdaINCode,
}

pub fn load_switch(path: impl AsRef<Path>) -> Result<Switch> {
    let (ckpt, _) = Checkpoint::load_filtered(path, |n| n.starts_with("gen/") || n.starts_with("codegen/"))?;
    let config = RunConfig::parse(&ckpt.config)?;
    if config.model != ModelKind::Switchable {
        return Err(Error::Config("the checkpoint holds a two-generator model, not a switchable one".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gcfg = config.generator_config();
    let mut generator = Generator::build(&gcfg, &mut rng)?;
    generator.params_mut().load_from(|name| ckpt.get(&format!("gen/{name}")))?;
    let mut f = CodeGenerator::build(&CodeGenConfig::for_channels(gcfg.adain_layer_channels()), &mut rng)?;
    f.params_mut().load_from(|name| ckpt.get(&format!("codegen/{name}")))?;
    let code_y = code_forward(&f, &f.canonical_input())?;
    Ok(Switch { config, generator, code_y })
}

impl Switch {
    pub fn from_state(s: &TrainState) -> Result<Self> {
        match &s.translator {
            TranslatorModel::Switchable { g, f } => Ok(Self {
                config: s.config.clone(),
                generator: g.clone(),
                code_y: code_forward(f, &f.canonical_input())?,
            }),
            TranslatorModel::TwoGenerator { .. } => Err(Error::Config("not a switchable model".into())),
        }
    }

    pub fn to_x(&self, hf: &Tensor) -> Result<Tensor> {
        run_generator(&self.generator, hf, &constant_code(self.generator.config()))
    }

    pub fn to_y(&self, hf: &Tensor) -> Result<Tensor> {
        run_generator(&self.generator, hf, &self.code_y)
    }

    fn hf(&self, image_hu: &Tensor) -> Result<Tensor> {
        highfreq_extract(&normalize_intensity(image_hu), self.config.wavelet_levels, self.config.wavelet)
    }
}

/// Output of the switch demonstration, in HU.
pub struct SwitchDemo {
    pub denoised: Tensor,
    pub noised: Tensor,
    /// Reference-free noise estimates of input, `c_x` output and learned-code output.
    pub noise_input: f64,
    pub noise_denoised: f64,
    pub noise_noised: f64,
}

/// `switch-demo`: the same input under both codes.
pub fn cmd_switch_demo(cfg: &RunConfig) -> Result<SwitchDemo> {
    let sw = load_switch(require(&cfg.checkpoint, "checkpoint")?)?;
    let input = read_image(require(&cfg.input, "input")?)?;
    let norm = normalize_intensity(&input);
    let hf = sw.hf(&input)?;
    let denoised = denormalize_intensity(&recompose_denoised(&norm, &hf, &sw.to_x(&hf)?)?);
    let noised = denormalize_intensity(&recompose_denoised(&norm, &hf, &sw.to_y(&hf)?)?);
    if !cfg.output.is_empty() {
        let out = PathBuf::from(&cfg.output);
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("switch").to_string();
        let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("img").to_string();
        let dir = out.parent().unwrap_or(Path::new("."));
        save_image(&dir.join(format!("{stem}_cx.{ext}")), &denoised, cfg)?;
        save_image(&dir.join(format!("{stem}_cy.{ext}")), &noised, cfg)?;
    }
    Ok(SwitchDemo {
        noise_input: estimate_noise_sigma(&input)?,
        noise_denoised: estimate_noise_sigma(&denoised)?,
        noise_noised: estimate_noise_sigma(&noised)?,
        denoised,
        noised,
    })
}

/// Generator, code generator and two-generator parameter totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTable {
    pub generator: usize,
    pub code_generator: usize,
    pub switchable_total: usize,
    pub two_generator_total: usize,
}

impl ParamTable {
    pub fn for_config(cfg: &RunConfig) -> Result<Self> {
        let gcfg = cfg.generator_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::build(&gcfg, &mut rng)?.param_count();
        let f = CodeGenerator::build(&CodeGenConfig::for_channels(gcfg.adain_layer_channels()), &mut rng)?.param_count();
        Ok(Self { generator: g, code_generator: f, switchable_total: g + f, two_generator_total: 2 * g })
    }

    /// `(G + F) / 2G`.
    pub fn ratio(&self) -> f64 {
        self.switchable_total as f64 / self.two_generator_total as f64
    }

    pub fn code_to_generator(&self) -> f64 {
        self.code_generator as f64 / self.generator as f64
    }

    pub fn to_text(&self) -> String {
        format!(
            "network\tparameters\n\
             generator\t{}\n\
             code_generator\t{}\n\
             switchable_total\t{}\n\
             two_generator_total\t{}\n\
             ratio_switchable_to_two_generator\t{:.6}\n\
             ratio_code_generator_to_generator\t{:.6}\n",
            self.generator,
            self.code_generator,
            self.switchable_total,
            self.two_generator_total,
            self.ratio(),
            self.code_to_generator()
        )
    }
}

pub fn cmd_params(cfg: &RunConfig) -> Result<ParamTable> {
    cfg.validate()?;
    ParamTable::for_config(cfg)
}

/// Denoised and untouched scores over the paired evaluation split.
pub struct Evaluation {
    pub denoised: EvalReport,
    pub noisy: EvalReport,
}

pub fn evaluate(d: &Denoiser, pairs: &[(ImageRecord, ImageRecord)]) -> Result<Evaluation> {
    let config = d.config.to_text();
    let mut denoised = EvalReport { config: config.clone(), ..Default::default() };
    let mut noisy = EvalReport { config, ..Default::default() };
    for (clean, low) in pairs {
        let out = d.denoise(&low.pixels)?;
        denoised.rows.push(score_image(&low.id, &low.pixels, &clean.pixels, &out)?);
        noisy.rows.push(score_image(&low.id, &low.pixels, &clean.pixels, &low.pixels)?);
    }
    if pairs.is_empty() {
        return Err(Error::Config("the dataset has no evaluation pairs".into()));
    }
    Ok(Evaluation { denoised, noisy })
}

/// `eval`: scores the checkpoint on the evaluation split of `data_dir` and
/// writes `eval.tsv` / `eval.txt` into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Evaluation> {
    let d = load_denoiser(require(&cfg.checkpoint, "checkpoint")?)?;
    let pairs = dataio::load_eval_pairs(&cfg.data_dir)?;
    let ev = evaluate(&d, &pairs)?;
    let out = Path::new(&cfg.out_dir);
    fs::create_dir_all(out)?;
    fs::write(out.join("eval.tsv"), ev.denoised.to_tsv())?;
    let mut kv = ev.denoised.to_key_values();
    kv.push_str(&format!(
        "input_mean_psnr_db = {}\ninput_mean_ssim = {}\n",
        ev.noisy.mean_psnr(),
        ev.noisy.mean_ssim()
    ));
    fs::write(out.join("eval.txt"), kv)?;
    Ok(ev)
}

/// High-frequency-domain behavior of both codes on the evaluation pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwitchStats {
    /// Mean `noise_std(y vs clean)`.
    pub noisy: f64,
    /// Mean `noise_std(G(y; c_x) vs clean)`.
    pub denoised: f64,
    /// Mean `noise_std(x vs clean)`; zero because `x` is the clean image.
    pub clean: f64,
    /// Mean `noise_std(G(x; F(c)) vs clean)`.
    pub synthesized: f64,
    /// Mean `noise_std(G(x; c_x) vs clean)`.
    pub identity_noise: f64,
    /// Mean of `mean|G(x; c_x) − x|` over images.
    pub identity_error: f64,
    /// Mean of `mean|x|` over images.
    pub clean_magnitude: f64,
}

pub fn switch_stats(sw: &Switch, pairs: &[(ImageRecord, ImageRecord)]) -> Result<SwitchStats> {
    let mut s = SwitchStats::default();
    for (clean, low) in pairs {
        let x = sw.hf(&clean.pixels)?;
        let y = sw.hf(&low.pixels)?;
        let gx = sw.to_x(&x)?;
        s.noisy += noise_std(&y, &x)?;
        s.denoised += noise_std(&sw.to_x(&y)?, &x)?;
        s.clean += noise_std(&x, &x)?;
        s.synthesized += noise_std(&sw.to_y(&x)?, &x)?;
        s.identity_noise += noise_std(&gx, &x)?;
        s.identity_error += gx.sub(&x)?.map(f64::abs).mean();
        s.clean_magnitude += x.map(f64::abs).mean();
    }
    let n = pairs.len().max(1) as f64;
    for v in [
        &mut s.noisy,
        &mut s.denoised,
        &mut s.clean,
        &mut s.synthesized,
        &mut s.identity_noise,
        &mut s.identity_error,
        &mut s.clean_magnitude,
    ] {
        *v /= n;
    }
    Ok(s)
}

/// One ablation cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub seed: u64,
    pub model: ModelKind,
    pub fraction: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    pub fn cell(&self, seed: u64, model: ModelKind, fraction: f64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.seed == seed && c.model == model && c.fraction == fraction)
    }

    /// PSNR at the first fraction minus PSNR at the last one.
    pub fn degradation(&self, seed: u64, model: ModelKind) -> Option<f64> {
        let first = self.cell(seed, model, *self.fractions.first()?)?;
        let last = self.cell(seed, model, *self.fractions.last()?)?;
        Some(first.psnr - last.psnr)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("seed\tmodel\tfraction\tpsnr_db\tssim\n");
        for c in &self.cells {
            out.push_str(&format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", c.seed, c.model, c.fraction, c.psnr, c.ssim));
        }
        out.push_str("\nseed\tswitchable_drop_db\ttwo_generator_drop_db\n");
        for &s in &self.seeds {
            let a = self.degradation(s, ModelKind::Switchable).unwrap_or(f64::NAN);
            let b = self.degradation(s, ModelKind::TwoGenerator).unwrap_or(f64::NAN);
            out.push_str(&format!("{s}\t{a:.6}\t{b:.6}\n"));
        }
        out
    }
}

/// `ablate`: trains both models on every fraction for every seed with a fixed
/// step budget and scores each on the evaluation split.
pub fn cmd_ablate(cfg: &RunConfig, mut on_cell: impl FnMut(&AblationCell)) -> Result<AblationGrid> {
    cfg.validate()?;
    let records = dataio::load_training_records(&cfg.data_dir)?;
    let pairs = dataio::load_eval_pairs(&cfg.data_dir)?;
    let mut grid = AblationGrid { fractions: cfg.ablate_fractions.0.clone(), seeds: cfg.ablate_seeds.0.clone(), ..Default::default() };
    for &seed in &cfg.ablate_seeds.0 {
        let pools = prepare_pools(&records, cfg.wavelet_levels, cfg.wavelet, seed)?;
        for model in [ModelKind::Switchable, ModelKind::TwoGenerator] {
            for &fraction in &cfg.ablate_fractions.0 {
                let run = RunConfig {
                    seed,
                    model,
                    epochs: 1,
                    steps_per_epoch: cfg.ablate_steps,
                    early_stop_patience: 0,
                    checkpoint_keep: 1,
                    out_dir: Path::new(&cfg.out_dir)
                        .join("ablate")
                        .join(format!("seed{seed}_{model}_{fraction}"))
                        .to_string_lossy()
                        .into_owned(),
                    ..cfg.clone()
                };
                let state = fit(&run, &pools.fraction(fraction)?, Path::new(&run.out_dir), false, |_| {})?;
                let d = Denoiser { config: run.clone(), generator: state.translator.denoiser().clone(), loaded: Vec::new() };
                let ev = evaluate(&d, &pairs)?;
                let cell = AblationCell { seed, model, fraction, psnr: ev.denoised.mean_psnr(), ssim: ev.denoised.mean_ssim() };
                on_cell(&cell);
                grid.cells.push(cell);
            }
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(Path::new(&cfg.out_dir).join("ablation.tsv"), grid.to_tsv())?;
    Ok(grid)
}

/// The newest epoch checkpoint in `out_dir`.
pub fn latest_checkpoint(cfg: &RunConfig) -> Result<PathBuf> {
    trainer::latest_checkpoint(Path::new(&cfg.out_dir))?
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint in out_dir")))
}
