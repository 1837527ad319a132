use std::path::PathBuf;
use std::process::ExitCode;

use adaswitch::app;
use adaswitch::config::RunConfig;
use adaswitch::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const KEY_HELP: &str = "Any config key can be given as a flag, e.g. `--epochs 5 --lambda-cyc 10`. \
Flags override values loaded with --config. Run `adaswitch keys` for the full list.";

#[derive(Parser)]
#[command(name = "adaswitch", version, about = "AdaIN-switchable cycleGAN denoising in the wavelet-residual domain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired phantom dataset to data_dir.
    Synth(Common),
    /// Train on the dataset in data_dir; checkpoints and loss log go to out_dir.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the newest checkpoint in out_dir.
        #[arg(long)]
        resume: bool,
    },
    /// Denoise `input` with `checkpoint`, writing `output` (.pgm for 8-bit greyscale).
    Denoise(Common),
    /// Run `input` through both AdaIN codes and report noise estimates.
    SwitchDemo(Common),
    /// Print parameter counts of G, F and the two-generator baseline.
    Params(Common),
    /// Score `checkpoint` on the evaluation split of data_dir.
    Eval(Common),
    /// Data-fraction ablation of the switchable and two-generator models.
    Ablate(Common),
    /// List config keys with their defaults.
    Keys,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Reference,
}

#[derive(Args)]
#[command(after_help = KEY_HELP)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting defaults before the file and flags are applied.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Config overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Removes a bare flag that landed among the trailing overrides.
    fn take_flag(&mut self, flag: &str) -> bool {
        let before = self.overrides.len();
        self.overrides.retain(|a| a != flag);
        self.overrides.len() != before
    }

    fn resolve(&self) -> adaswitch::Result<RunConfig> {
        let mut cfg = match self.preset {
            Preset::Desk => RunConfig::default(),
            Preset::Reference => RunConfig::reference(),
        };
        if let Some(path) = &self.config {
            cfg.parse_into(&std::fs::read_to_string(path)?)?;
        }
        apply_overrides(&mut cfg, &self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_overrides(cfg: &mut RunConfig, args: &[String]) -> adaswitch::Result<()> {
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let body = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected a --key flag, found '{flag}'")))?;
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("flag '{flag}' needs a value")))?;
                (body, v.clone())
            }
        };
        cfg.set(key, &value)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Dimension(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
    }
}

fn run(cli: Cli) -> adaswitch::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = c.resolve()?;
            let m = app::cmd_synth(&cfg)?;
            println!("wrote {} images to {}", m.entries.len(), cfg.data_dir);
        }
        Command::Train { mut common, resume } => {
            let resume = common.take_flag("--resume") || resume;
            let cfg = common.resolve()?;
            let state = app::cmd_train(&cfg, resume, |s| {
                let m = &s.mean;
                println!(
                    "epoch {:>3}  steps {:>4}  disc {:.4}  adv {:.4}  cycle {:.4}  identity {:.4}  total {:.4}  ({:.1}s)",
                    s.epoch,
                    s.steps,
                    m.disc,
                    m.gen_adv,
                    m.cycle,
                    m.identity,
                    m.total,
                    s.elapsed.as_secs_f64()
                );
            })?;
            println!("finished {} epochs, {} steps; checkpoints in {}", state.epoch, state.step, cfg.out_dir);
        }
        Command::Denoise(c) => {
            let cfg = c.resolve()?;
            let out = app::cmd_denoise(&cfg)?;
            let (h, w, _) = out.hwc()?;
            if cfg.output.is_empty() {
                println!("denoised {h}x{w} image (no output path given)");
            } else {
                println!("wrote {h}x{w} image to {}", cfg.output);
            }
        }
        Command::SwitchDemo(c) => {
            let cfg = c.resolve()?;
            let d = app::cmd_switch_demo(&cfg)?;
            println!("code\testimated_noise_hu");
            println!("input\t{:.3}", d.noise_input);
            println!("c_x\t{:.3}", d.noise_denoised);
            println!("F(c)\t{:.3}", d.noise_noised);
        }
        Command::Params(c) => {
            let cfg = c.resolve()?;
            print!("{}", app::cmd_params(&cfg)?.to_text());
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let ev = app::cmd_eval(&cfg)?;
            print!("{}", ev.denoised.to_tsv());
            println!(
                "mean psnr {:.3} dB (input {:.3})  mean ssim {:.4} (input {:.4})",
                ev.denoised.mean_psnr(),
                ev.noisy.mean_psnr(),
                ev.denoised.mean_ssim(),
                ev.noisy.mean_ssim()
            );
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            let grid = app::cmd_ablate(&cfg, |cell| {
                println!(
                    "seed {}  {}  fraction {}  psnr {:.3}  ssim {:.4}",
                    cell.seed, cell.model, cell.fraction, cell.psnr, cell.ssim
                );
            })?;
            print!("\n{}", grid.to_tsv());
        }
        Command::Keys => {
            let cfg = RunConfig::default();
            for (key, doc) in RunConfig::KEYS {
                println!("{key} = {}\n    {}", cfg.get(key).unwrap_or_default(), doc.trim());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adaswitch: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
