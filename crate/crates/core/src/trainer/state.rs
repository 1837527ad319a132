use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::translator::TranslatorModel;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::checkpoint::Checkpoint;
use crate::models::{Discriminator, ModelGraph, ParamStore};
use crate::tensor::Tensor;

/// RNG stream used for parameter initialization.
const INIT_STREAM: u64 = 100;

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: RunConfig,
    pub translator: TranslatorModel,
    pub disc_x: Discriminator,
    pub disc_y: Discriminator,
    pub opt_gen: AdamState,
    pub opt_dx: AdamState,
    pub opt_dy: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Lowest epoch-mean total loss so far, for early stopping.
    pub best_total: f64,
    pub stale_epochs: usize,
}

fn push_store(c: &mut Checkpoint, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        c.push(format!("{prefix}/{name}"), t.clone());
    }
}

fn load_store(c: &Checkpoint, prefix: &str, store: &mut ParamStore) -> Result<()> {
    store.load_from(|name| c.get(&format!("{prefix}/{name}")))
}

fn push_adam(c: &mut Checkpoint, prefix: &str, a: &AdamState) {
    c.push(format!("adam/{prefix}/t"), Tensor::scalar(a.t as f64));
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        c.push(format!("adam/{prefix}/m{i}"), m.clone());
        c.push(format!("adam/{prefix}/v{i}"), v.clone());
    }
}

fn scalar(c: &Checkpoint, name: &str) -> Result<f64> {
    c.get(name).ok_or_else(|| Error::Format(format!("checkpoint lacks '{name}'")))?.item()
}

fn load_adam(c: &Checkpoint, prefix: &str, a: &mut AdamState) -> Result<()> {
    a.t = scalar(c, &format!("adam/{prefix}/t"))? as u64;
    for (i, (m, v)) in a.m.iter_mut().zip(a.v.iter_mut()).enumerate() {
        for (slot, kind) in [(m, "m"), (v, "v")] {
            let name = format!("adam/{prefix}/{kind}{i}");
            let t = c.get(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks '{name}'")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!("'{name}' has the wrong shape")));
            }
            *slot = t.clone();
        }
    }
    Ok(())
}

impl TrainState {
    /// Fresh networks initialized from the config seed.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let translator = TranslatorModel::build(config.model, &config.generator_config(), &mut rng)?;
        let disc_x = Discriminator::build(&config.disc_config(), &mut rng)?;
        let disc_y = Discriminator::build(&config.disc_config(), &mut rng)?;
        let adam = AdamConfig::new(config.learning_rate);
        Ok(Self {
            opt_gen: AdamState::new(adam, translator.tensors()),
            opt_dx: AdamState::new(adam, disc_x.params().iter().map(|(_, t)| t)),
            opt_dy: AdamState::new(adam, disc_y.params().iter().map(|(_, t)| t)),
            config: config.clone(),
            translator,
            disc_x,
            disc_y,
            epoch: 0,
            step: 0,
            best_total: f64::INFINITY,
            stale_epochs: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint { config: self.config.to_text(), ..Default::default() };
        for (prefix, store) in self.translator.stores() {
            push_store(&mut c, prefix, store);
        }
        push_store(&mut c, "disc_x", self.disc_x.params());
        push_store(&mut c, "disc_y", self.disc_y.params());
        push_adam(&mut c, "gen", &self.opt_gen);
        push_adam(&mut c, "disc_x", &self.opt_dx);
        push_adam(&mut c, "disc_y", &self.opt_dy);
        c.push("state/epoch", Tensor::scalar(self.epoch as f64));
        c.push("state/step", Tensor::scalar(self.step as f64));
        c.push("state/best_total", Tensor::scalar(self.best_total));
        c.push("state/stale_epochs", Tensor::scalar(self.stale_epochs as f64));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&c.config)?;
        let mut s = Self::new(&config)?;
        for (prefix, store) in s.translator.stores_mut() {
            load_store(c, prefix, store)?;
        }
        load_store(c, "disc_x", s.disc_x.params_mut())?;
        load_store(c, "disc_y", s.disc_y.params_mut())?;
        load_adam(c, "gen", &mut s.opt_gen)?;
        load_adam(c, "disc_x", &mut s.opt_dx)?;
        load_adam(c, "disc_y", &mut s.opt_dy)?;
        s.epoch = scalar(c, "state/epoch")? as usize;
        s.step = scalar(c, "state/step")? as u64;
        s.best_total = scalar(c, "state/best_total")?;
        s.stale_epochs = scalar(c, "state/stale_epochs")? as usize;
        Ok(s)
    }
}
