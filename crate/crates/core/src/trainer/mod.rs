//! Adam, patch sampling and the alternating critic / generator loop.

mod adam;
mod patch;
mod state;
mod translator;

pub use adam::{AdamConfig, AdamState};
pub use patch::{crop_patch, sample_patch_pair};
pub use state::TrainState;
pub use translator::{BoundTranslator, TranslatorModel};

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataio::DatasetPools;
use crate::error::{contract_err, Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::{Discriminator, ModelGraph};
use crate::objectives::{disc_loss_from_scores, generator_losses_with_fakes, Translator};
use crate::tensor::{Tape, Tensor, Var};

pub const LOSS_LOG: &str = "loss_log.tsv";
pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const LOSS_LOG_HEADER: &str = "step\tdisc\tgen_adv\tcycle\tidentity\ttotal";

/// Offset of the per-epoch sampling streams.
const EPOCH_STREAM: u64 = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRecord {
    pub disc: f64,
    pub gen_adv: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
}

impl LossRecord {
    pub const NAMES: [&'static str; 5] = ["disc", "gen_adv", "cycle", "identity", "total"];

    pub fn values(&self) -> [f64; 5] {
        [self.disc, self.gen_adv, self.cycle, self.identity, self.total]
    }

    fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    fn mean(records: &[LossRecord]) -> LossRecord {
        let n = records.len().max(1) as f64;
        let s = |f: fn(&LossRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        LossRecord {
            disc: s(|r| r.disc),
            gen_adv: s(|r| r.gen_adv),
            cycle: s(|r| r.cycle),
            identity: s(|r| r.identity),
            total: s(|r| r.total),
        }
    }
}

fn check_finite(v: f64, what: &str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} loss is {v} at step {}", step + 1)))
    }
}

fn grads(tape: &Tape, leaves: &[Var]) -> Vec<Tensor> {
    leaves.iter().map(|&v| tape.grad_or_zeros(v)).collect()
}

/// One critic update followed by one joint generator update.
///
/// The translated batches are computed once on the generator tape; their
/// values are what a fresh forward pass would give, since the critic update
/// does not touch generator parameters.
pub fn train_step(state: &mut TrainState, batch_x: &[Tensor], batch_y: &[Tensor]) -> Result<LossRecord> {
    if batch_x.is_empty() || batch_x.len() != batch_y.len() {
        return Err(contract_err!("batches must be non-empty and of equal size"));
    }
    let weights = state.config.loss_weights()?;
    let step = state.step;

    let mut gt = Tape::new();
    let bound = state.translator.bind(&mut gt, true)?;
    let xs: Vec<Var> = batch_x.iter().map(|t| gt.constant(t.clone())).collect();
    let ys: Vec<Var> = batch_y.iter().map(|t| gt.constant(t.clone())).collect();
    let fake_y = xs.iter().map(|&x| bound.to_y(&mut gt, x)).collect::<Result<Vec<_>>>()?;
    let fake_x = ys.iter().map(|&y| bound.to_x(&mut gt, y)).collect::<Result<Vec<_>>>()?;

    // critic step
    let disc = {
        let mut dt = Tape::new();
        let px = state.disc_x.params().bind(&mut dt, true);
        let py = state.disc_y.params().bind(&mut dt, true);
        let mut scores = |d: &Discriminator, p: &[Var], vals: Vec<Tensor>| -> Result<Vec<Var>> {
            vals.into_iter()
                .map(|v| {
                    let c = dt.constant(v);
                    d.forward(&mut dt, p, c)
                })
                .collect()
        };
        let value_of = |vs: &[Var]| vs.iter().map(|&v| gt.value(v).clone()).collect::<Vec<_>>();
        let dy_real = scores(&state.disc_y, &py, batch_y.to_vec())?;
        let dy_fake = scores(&state.disc_y, &py, value_of(&fake_y))?;
        let dx_real = scores(&state.disc_x, &px, batch_x.to_vec())?;
        let dx_fake = scores(&state.disc_x, &px, value_of(&fake_x))?;
        let loss = disc_loss_from_scores(&mut dt, &dy_real, &dy_fake, &dx_real, &dx_fake, weights.gan_mode)?;
        let value = dt.value(loss).item()?;
        check_finite(value, "critic", step)?;
        dt.backward(loss)?;
        let (gx, gy) = (grads(&dt, &px), grads(&dt, &py));
        state.opt_dx.step(&mut state.disc_x.params_mut().tensors_mut().collect::<Vec<_>>(), &gx)?;
        state.opt_dy.step(&mut state.disc_y.params_mut().tensors_mut().collect::<Vec<_>>(), &gy)?;
        value
    };

    // generator step against the updated critics
    let px = state.disc_x.params().bind(&mut gt, false);
    let py = state.disc_y.params().bind(&mut gt, false);
    let critic_x = |t: &mut Tape, v: Var| state.disc_x.forward(t, &px, v);
    let critic_y = |t: &mut Tape, v: Var| state.disc_y.forward(t, &py, v);
    let l = generator_losses_with_fakes(&mut gt, &critic_x, &critic_y, &bound, &xs, &ys, &fake_x, &fake_y, &weights)?;
    let record = LossRecord {
        disc,
        gen_adv: gt.value(l.adv).item()?,
        cycle: gt.value(l.cycle).item()?,
        identity: gt.value(l.identity).item()?,
        total: gt.value(l.total).item()?,
    };
    check_finite(record.total, "generator", step)?;
    gt.backward(l.total)?;
    let g = grads(&gt, &bound.leaves);
    drop(bound);
    state.opt_gen.step(&mut state.translator.tensors_mut(), &g)?;
    state.step += 1;
    debug_assert!(record.all_finite());
    Ok(record)
}

/// Progress report after each epoch.
#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossRecord,
    pub checkpoint: PathBuf,
    pub elapsed: Duration,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Epoch checkpoints in `out_dir`, oldest first.
pub fn list_checkpoints(out_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = out_dir.join(CHECKPOINT_DIR);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(n) = name.strip_prefix("epoch_").and_then(|r| r.strip_suffix(".ckpt")) {
            if let Ok(e) = n.parse() {
                found.push((e, path));
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn latest_checkpoint(out_dir: &Path) -> Result<Option<PathBuf>> {
    Ok(list_checkpoints(out_dir)?.pop().map(|(_, p)| p))
}

fn steps_per_epoch(cfg: &RunConfig, pools: &DatasetPools) -> usize {
    if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        pools.pool_x.len().max(pools.pool_y.len()).div_ceil(cfg.batch_size)
    }
}

fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Keeps only lines of the loss log up to `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let mut kept = vec![LOSS_LOG_HEADER.to_string()];
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            match line.split('\t').next().and_then(|s| s.parse::<u64>().ok()) {
                Some(s) if s <= step => kept.push(line),
                _ => break,
            }
        }
    }
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

fn prune_checkpoints(out_dir: &Path, keep: usize) -> Result<()> {
    if keep == 0 {
        return Ok(());
    }
    let all = list_checkpoints(out_dir)?;
    for (_, p) in all.iter().take(all.len().saturating_sub(keep)) {
        fs::remove_file(p)?;
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs, writing a checkpoint after each epoch and
/// one loss-log line per step. With `resume`, continues from the newest
/// checkpoint in `out_dir` using the configuration archived in it; only
/// `epochs` is taken from `cfg`.
pub fn fit(
    cfg: &RunConfig,
    pools: &DatasetPools,
    out_dir: &Path,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainState> {
    cfg.validate()?;
    if pools.pool_x.is_empty() || pools.pool_y.is_empty() {
        return Err(contract_err!("training needs images in both pools"));
    }
    fs::create_dir_all(out_dir.join(CHECKPOINT_DIR))?;
    let log_path = out_dir.join(LOSS_LOG);

    let mut state = match (resume, latest_checkpoint(out_dir)?) {
        (true, Some(path)) => {
            let mut s = TrainState::from_checkpoint(&Checkpoint::load(path)?)?;
            s.config.epochs = cfg.epochs;
            truncate_log(&log_path, s.step)?;
            s
        }
        _ => {
            fs::write(&log_path, format!("{LOSS_LOG_HEADER}\n"))?;
            TrainState::new(cfg)?
        }
    };
    let run = state.config.clone();
    fs::write(out_dir.join(RESOLVED_CONFIG), run.to_text())?;
    let steps = steps_per_epoch(&run, pools);
    let mut log = OpenOptions::new().append(true).open(&log_path)?;

    while state.epoch < run.epochs {
        if run.early_stop_patience > 0 && state.stale_epochs >= run.early_stop_patience {
            break;
        }
        let started = Instant::now();
        let epoch = state.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        rng.set_stream(EPOCH_STREAM + epoch as u64);
        let order_x = epoch_order(pools.pool_x.len(), &mut rng);
        let order_y = epoch_order(pools.pool_y.len(), &mut rng);
        let mut records = Vec::with_capacity(steps);
        for i in 0..steps {
            let mut bx = Vec::with_capacity(run.batch_size);
            let mut by = Vec::with_capacity(run.batch_size);
            for j in 0..run.batch_size {
                let k = i * run.batch_size + j;
                bx.push(crop_patch(&pools.pool_x[order_x[k % order_x.len()]], run.patch_size, run.flips, &mut rng)?);
                by.push(crop_patch(&pools.pool_y[order_y[k % order_y.len()]], run.patch_size, run.flips, &mut rng)?);
            }
            let r = train_step(&mut state, &bx, &by)?;
            let v = r.values();
            writeln!(log, "{}\t{}\t{}\t{}\t{}\t{}", state.step, v[0], v[1], v[2], v[3], v[4])?;
            records.push(r);
        }
        log.flush()?;
        let mean = LossRecord::mean(&records);
        state.epoch = epoch;
        if mean.total < state.best_total {
            state.best_total = mean.total;
            state.stale_epochs = 0;
        } else {
            state.stale_epochs += 1;
        }
        let path = checkpoint_path(out_dir, epoch);
        state.to_checkpoint().save(&path)?;
        prune_checkpoints(out_dir, run.checkpoint_keep)?;
        on_epoch(&EpochSummary { epoch, steps, mean, checkpoint: path, elapsed: started.elapsed() });
    }
    Ok(state)
}

/// Reads the loss log back as `(step, record)` rows.
pub fn read_loss_log(out_dir: &Path) -> Result<Vec<(u64, LossRecord)>> {
    let text = fs::read_to_string(out_dir.join(LOSS_LOG))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<f64> = line
            .split('\t')
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad loss log line '{line}'"))))
            .collect::<Result<_>>()?;
        if f.len() != 6 {
            return Err(Error::Format(format!("bad loss log line '{line}'")));
        }
        rows.push((f[0] as u64, LossRecord { disc: f[1], gen_adv: f[2], cycle: f[3], identity: f[4], total: f[5] }));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;
    use rand::Rng;

    fn tiny_config() -> RunConfig {
        RunConfig {
            base_channels: 2,
            disc_channels: 2,
            image_size: 64,
            patch_size: 16,
            wavelet_levels: 4,
            ..RunConfig::default()
        }
    }

    fn batch(seed: u64) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = || Tensor::from_fn([16, 16, 1], |_| rng.random_range(-0.2..0.2));
        (vec![img()], vec![img()])
    }

    fn snapshot(s: &TrainState) -> (Vec<Tensor>, Vec<Tensor>) {
        let t = s.translator.tensors().into_iter().cloned().collect();
        let d = s.disc_x.params().iter().chain(s.disc_y.params().iter()).map(|(_, t)| t.clone()).collect();
        (t, d)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut s = TrainState::new(&RunConfig { learning_rate: 0.0, ..tiny_config() }).unwrap();
        let before = snapshot(&s);
        let (x, y) = batch(1);
        let r = train_step(&mut s, &x, &y).unwrap();
        assert!(r.all_finite());
        assert_eq!(snapshot(&s), before);
        assert_eq!(LossRecord::NAMES.len(), r.values().len());
    }

    #[test]
    fn critic_update_leaves_generator_untouched() {
        // lr applies to all optimizers; freezing the generator optimizer alone
        // shows the critic step moves only critic parameters
        let mut s = TrainState::new(&tiny_config()).unwrap();
        s.opt_gen.cfg.learning_rate = 0.0;
        let before = snapshot(&s);
        let (x, y) = batch(2);
        train_step(&mut s, &x, &y).unwrap();
        let after = snapshot(&s);
        assert_eq!(after.0, before.0);
        assert_ne!(after.1, before.1);
    }

    #[test]
    fn generator_update_leaves_critics_untouched() {
        let mut s = TrainState::new(&tiny_config()).unwrap();
        s.opt_dx.cfg.learning_rate = 0.0;
        s.opt_dy.cfg.learning_rate = 0.0;
        let before = snapshot(&s);
        let (x, y) = batch(3);
        train_step(&mut s, &x, &y).unwrap();
        let after = snapshot(&s);
        assert_eq!(after.1, before.1);
        assert_ne!(after.0, before.0);
    }

    #[test]
    fn nan_input_aborts() {
        let mut s = TrainState::new(&tiny_config()).unwrap();
        let (mut x, y) = batch(4);
        x[0].data_mut()[5] = f64::NAN;
        assert!(matches!(train_step(&mut s, &x, &y), Err(Error::Numeric(_))));
    }

    #[test]
    fn checkpoint_round_trip_continues_identically() {
        for kind in [ModelKind::Switchable, ModelKind::TwoGenerator] {
            let mut a = TrainState::new(&RunConfig { model: kind, ..tiny_config() }).unwrap();
            let (x, y) = batch(5);
            train_step(&mut a, &x, &y).unwrap();
            let mut b = TrainState::from_checkpoint(&a.to_checkpoint()).unwrap();
            let (x, y) = batch(6);
            let ra = train_step(&mut a, &x, &y).unwrap();
            let rb = train_step(&mut b, &x, &y).unwrap();
            assert_eq!(ra, rb);
            assert_eq!(a.to_checkpoint(), b.to_checkpoint());
        }
    }
}
