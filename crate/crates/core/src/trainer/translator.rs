use rand::Rng;

use crate::config::ModelKind;
use crate::error::Result;
use crate::models::{
    constant_code, CodeGenConfig, CodeGenerator, CodeVars, Generator, GeneratorConfig, ModelGraph, ParamStore,
};
use crate::objectives::Translator;
use crate::tensor::{Tape, Tensor, Var};

/// The trainable translation side: generator(s) plus code generator.
#[derive(Clone, Debug)]
pub enum TranslatorModel {
    Switchable { g: Generator, f: CodeGenerator },
    /// `g_yx` denoises, `g_xy` synthesizes noise; both use the constant code.
    TwoGenerator { g_yx: Generator, g_xy: Generator },
}

impl TranslatorModel {
    pub fn build<R: Rng + ?Sized>(kind: ModelKind, cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            ModelKind::Switchable => {
                let g = Generator::build(cfg, rng)?;
                let f = CodeGenerator::build(&CodeGenConfig::for_channels(cfg.adain_layer_channels()), rng)?;
                TranslatorModel::Switchable { g, f }
            }
            ModelKind::TwoGenerator => {
                TranslatorModel::TwoGenerator { g_yx: Generator::build(cfg, rng)?, g_xy: Generator::build(cfg, rng)? }
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TranslatorModel::Switchable { .. } => ModelKind::Switchable,
            TranslatorModel::TwoGenerator { .. } => ModelKind::TwoGenerator,
        }
    }

    /// The Y → X generator used at inference.
    pub fn denoiser(&self) -> &Generator {
        match self {
            TranslatorModel::Switchable { g, .. } => g,
            TranslatorModel::TwoGenerator { g_yx, .. } => g_yx,
        }
    }

    /// Parameter stores with their checkpoint prefixes, in optimizer order.
    pub fn stores(&self) -> Vec<(&'static str, &ParamStore)> {
        match self {
            TranslatorModel::Switchable { g, f } => vec![("gen", g.params()), ("codegen", f.params())],
            TranslatorModel::TwoGenerator { g_yx, g_xy } => vec![("gen", g_yx.params()), ("gen_xy", g_xy.params())],
        }
    }

    pub fn stores_mut(&mut self) -> Vec<(&'static str, &mut ParamStore)> {
        match self {
            TranslatorModel::Switchable { g, f } => vec![("gen", g.params_mut()), ("codegen", f.params_mut())],
            TranslatorModel::TwoGenerator { g_yx, g_xy } => {
                vec![("gen", g_yx.params_mut()), ("gen_xy", g_xy.params_mut())]
            }
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.stores().into_iter().flat_map(|(_, s)| s.iter().map(|(_, t)| t)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stores_mut().into_iter().flat_map(|(_, s)| s.tensors_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.stores().iter().map(|(_, s)| s.count()).sum()
    }

    /// Records the parameters (and the learned code, if any) on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape, trainable: bool) -> Result<BoundTranslator<'a>> {
        match self {
            TranslatorModel::Switchable { g, f } => {
                let gp = g.params().bind(tape, trainable);
                let fp = f.params().bind(tape, trainable);
                let c = tape.constant(f.canonical_input());
                let code_y = f.forward(tape, &fp, c)?;
                let code_x = constant_code(g.config()).bind(tape);
                let leaves = gp.iter().chain(&fp).copied().collect();
                Ok(BoundTranslator { to_x: (g, gp.clone()), to_y: (g, gp), code_x, code_y, leaves })
            }
            TranslatorModel::TwoGenerator { g_yx, g_xy } => {
                let p_yx = g_yx.params().bind(tape, trainable);
                let p_xy = g_xy.params().bind(tape, trainable);
                let code_x = constant_code(g_yx.config()).bind(tape);
                let leaves = p_yx.iter().chain(&p_xy).copied().collect();
                Ok(BoundTranslator { to_x: (g_yx, p_yx), to_y: (g_xy, p_xy), code_y: code_x.clone(), code_x, leaves })
            }
        }
    }
}

/// A translator recorded on one tape.
pub struct BoundTranslator<'a> {
    to_x: (&'a Generator, Vec<Var>),
    to_y: (&'a Generator, Vec<Var>),
    code_x: CodeVars,
    code_y: CodeVars,
    /// Parameter leaves in the same order as [`TranslatorModel::tensors`].
    pub leaves: Vec<Var>,
}

impl BoundTranslator<'_> {
    pub fn code_y(&self) -> &CodeVars {
        &self.code_y
    }
}

impl Translator for BoundTranslator<'_> {
    fn to_x(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        self.to_x.0.forward(tape, &self.to_x.1, v, &self.code_x)
    }

    fn to_y(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        self.to_y.0.forward(tape, &self.to_y.1, v, &self.code_y)
    }
}
