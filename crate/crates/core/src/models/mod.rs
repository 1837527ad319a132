//! The switchable U-Net generator, the AdaIN code generator and the
//! PatchGAN-style discriminator.

pub mod checkpoint;
mod codegen;
mod discriminator;
mod generator;

pub use codegen::{code_forward, CodeGenConfig, CodeGenerator, CODE_INPUT_LEN};
pub use discriminator::{DiscConfig, Discriminator};
pub use generator::{constant_code, Generator, GeneratorConfig, ADAIN_LAYERS};

use crate::error::{contract_err, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Replaces values from `(name, tensor)` pairs; every stored name must be supplied
    /// with a matching shape.
    pub fn load_from<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for (name, t) in &mut self.entries {
            let src = lookup(name).ok_or_else(|| contract_err!("missing parameter '{name}'"))?;
            if src.shape() != t.shape() {
                return Err(contract_err!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                ));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// A parameterized network.
pub trait ModelGraph {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    fn param_count(&self) -> usize {
        self.params().count()
    }
}

pub fn param_count(model: &impl ModelGraph) -> usize {
    model.param_count()
}

/// Target (mean, variance) vectors for every AdaIN layer of the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaINCode {
    pub pairs: Vec<(Tensor, Tensor)>,
}

impl AdaINCode {
    pub fn validate(&self, channels: &[usize]) -> Result<()> {
        if self.pairs.len() != channels.len() {
            return Err(contract_err!("AdaIN code has {} pairs, generator needs {}", self.pairs.len(), channels.len()));
        }
        for (i, ((m, v), &c)) in self.pairs.iter().zip(channels).enumerate() {
            if m.shape() != [c] || v.shape() != [c] {
                return Err(contract_err!("AdaIN pair {i} must have length {c}"));
            }
            if v.data().iter().any(|x| !(*x >= 0.0)) {
                return Err(contract_err!("AdaIN pair {i} has a negative variance"));
            }
        }
        Ok(())
    }

    /// Records the code as constants.
    pub fn bind(&self, tape: &mut Tape) -> CodeVars {
        CodeVars(self.pairs.iter().map(|(m, v)| (tape.constant(m.clone()), tape.constant(v.clone()))).collect())
    }

    /// Records the code as differentiable leaves.
    pub fn bind_trainable(&self, tape: &mut Tape) -> CodeVars {
        CodeVars(self.pairs.iter().map(|(m, v)| (tape.leaf(m.clone()), tape.leaf(v.clone()))).collect())
    }

    pub fn from_vars(tape: &Tape, vars: &CodeVars) -> Self {
        Self { pairs: vars.0.iter().map(|&(m, v)| (tape.value(m).clone(), tape.value(v).clone())).collect() }
    }
}

/// An AdaIN code living on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeVars(pub Vec<(Var, Var)>);
