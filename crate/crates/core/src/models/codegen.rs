use rand::Rng;

use super::{AdaINCode, CodeVars, ModelGraph, ParamStore};
use crate::error::{contract_err, Result};
use crate::layers::{dense, glorot_uniform_init};
use crate::tensor::{Tape, Tensor, Var};

/// Length of the constant all-ones input vector.
pub const CODE_INPUT_LEN: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct CodeGenConfig {
    pub input_len: usize,
    pub width: usize,
    pub shared_layers: usize,
    /// One head per AdaIN layer; head `i` emits `2 * head_channels[i]` values.
    pub head_channels: Vec<usize>,
}

impl CodeGenConfig {
    pub fn for_channels(head_channels: Vec<usize>) -> Self {
        Self { input_len: CODE_INPUT_LEN, width: 128, shared_layers: 4, head_channels }
    }
}

#[derive(Clone, Copy, Debug)]
struct DenseSlot {
    weight: usize,
    bias: usize,
}

/// Fully connected network mapping the constant input to an AdaIN code.
#[derive(Clone, Debug)]
pub struct CodeGenerator {
    cfg: CodeGenConfig,
    params: ParamStore,
    shared: Vec<DenseSlot>,
    heads: Vec<DenseSlot>,
}

fn add_dense<R: Rng + ?Sized>(params: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Result<DenseSlot> {
    let weight = params.push(format!("{name}.weight"), glorot_uniform_init(&[n_in, n_out], rng)?);
    let bias = params.push(format!("{name}.bias"), Tensor::zeros([n_out]));
    Ok(DenseSlot { weight, bias })
}

impl CodeGenerator {
    pub fn build<R: Rng + ?Sized>(cfg: &CodeGenConfig, rng: &mut R) -> Result<Self> {
        if cfg.input_len == 0 || cfg.width == 0 || cfg.head_channels.is_empty() {
            return Err(contract_err!("code generator needs positive widths and at least one head"));
        }
        let mut params = ParamStore::default();
        let mut shared = Vec::with_capacity(cfg.shared_layers);
        let mut n_in = cfg.input_len;
        for i in 0..cfg.shared_layers {
            shared.push(add_dense(&mut params, &format!("shared{}", i + 1), n_in, cfg.width, rng)?);
            n_in = cfg.width;
        }
        let heads = cfg
            .head_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| add_dense(&mut params, &format!("head{}", i + 1), n_in, 2 * c, rng))
            .collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), params, shared, heads })
    }

    pub fn config(&self) -> &CodeGenConfig {
        &self.cfg
    }

    /// The canonical input: a ones vector.
    pub fn canonical_input(&self) -> Tensor {
        Tensor::ones([self.cfg.input_len])
    }

    pub fn zero_heads(&mut self) {
        for slot in self.heads.clone() {
            for idx in [slot.weight, slot.bias] {
                self.params.get_mut(idx).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Shared layers with ReLU, then per-layer heads split into
    /// `[mean ‖ variance]` with ReLU on the variance half only.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], c: Var) -> Result<CodeVars> {
        if tape.shape(c) != [self.cfg.input_len] {
            return Err(contract_err!("code generator input must have length {}", self.cfg.input_len));
        }
        let mut h = c;
        for slot in &self.shared {
            let z = dense(tape, h, bound[slot.weight], bound[slot.bias])?;
            h = tape.relu(z);
        }
        let mut pairs = Vec::with_capacity(self.heads.len());
        for (slot, &ch) in self.heads.iter().zip(&self.cfg.head_channels) {
            let out = dense(tape, h, bound[slot.weight], bound[slot.bias])?;
            let mean = tape.slice_channels(out, 0, ch)?;
            let raw_var = tape.slice_channels(out, ch, ch)?;
            let var = tape.relu(raw_var);
            pairs.push((mean, var));
        }
        Ok(CodeVars(pairs))
    }
}

impl ModelGraph for CodeGenerator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Evaluates the code generator on a plain input vector.
pub fn code_forward(f: &CodeGenerator, c: &Tensor) -> Result<AdaINCode> {
    let mut tape = Tape::new();
    let bound = f.params().bind(&mut tape, false);
    let cv = tape.constant(c.clone());
    let vars = f.forward(&mut tape, &bound, cv)?;
    Ok(AdaINCode::from_vars(&tape, &vars))
}
