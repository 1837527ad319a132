use rand::Rng;

use super::{ModelGraph, ParamStore};
use crate::error::{contract_err, Result};
use crate::layers::{conv2d, glorot_uniform_init, Padding};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscConfig {
    /// Channels of the first layer; each stride-2 layer doubles them.
    pub base_channels: usize,
    pub strided_layers: usize,
    /// Stride-1 layers after the strided ones, at the last strided width.
    pub plain_layers: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { base_channels: 64, strided_layers: 4, plain_layers: 2, kernel: 3, leaky_slope: 0.2 }
    }
}

impl DiscConfig {
    pub fn layer_channels(&self) -> Vec<usize> {
        let top = self.base_channels << self.strided_layers.saturating_sub(1);
        (0..self.strided_layers)
            .map(|i| self.base_channels << i)
            .chain(std::iter::repeat_n(top, self.plain_layers))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    kernel: usize,
    bias: usize,
    stride: usize,
}

/// Convolutional critic emitting a spatial map of patch scores.
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscConfig,
    params: ParamStore,
    layers: Vec<Slot>,
    head: Slot,
}

impl Discriminator {
    pub fn build<R: Rng + ?Sized>(cfg: &DiscConfig, rng: &mut R) -> Result<Self> {
        if cfg.base_channels == 0 || cfg.strided_layers == 0 {
            return Err(contract_err!("discriminator needs channels and at least one strided layer"));
        }
        let mut params = ParamStore::default();
        let mut layers = Vec::new();
        let mut c_in = 1;
        for (i, c) in cfg.layer_channels().into_iter().enumerate() {
            let stride = if i < cfg.strided_layers { 2 } else { 1 };
            let k = cfg.kernel;
            let kernel = params.push(format!("conv{}.kernel", i + 1), glorot_uniform_init(&[k, k, c_in, c], rng)?);
            let bias = params.push(format!("conv{}.bias", i + 1), Tensor::zeros([c]));
            layers.push(Slot { kernel, bias, stride });
            c_in = c;
        }
        let kernel = params.push("head.kernel", glorot_uniform_init(&[1, 1, c_in, 1], rng)?);
        let bias = params.push("head.bias", Tensor::zeros([1]));
        Ok(Self { cfg: cfg.clone(), params, layers, head: Slot { kernel, bias, stride: 1 } })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        if !matches!(tape.shape(x), [_, _, 1]) {
            return Err(contract_err!("discriminator input must be [H, W, 1], got {:?}", tape.shape(x)));
        }
        let mut h = x;
        for slot in &self.layers {
            let z = conv2d(tape, h, bound[slot.kernel], bound[slot.bias], slot.stride, Padding::Same)?;
            h = tape.leaky_relu(z, self.cfg.leaky_slope);
        }
        conv2d(tape, h, bound[self.head.kernel], bound[self.head.bias], 1, Padding::Same)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl ModelGraph for Discriminator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_map_shape_and_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = DiscConfig { base_channels: 8, ..DiscConfig::default() };
        let d = Discriminator::build(&cfg, &mut rng).unwrap();
        let out = d.apply(&Tensor::ones([128, 128, 1])).unwrap();
        assert_eq!(out.shape(), &[8, 8, 1]);
    }

    #[test]
    fn reference_channel_schedule() {
        let cfg = DiscConfig::default();
        assert_eq!(cfg.layer_channels(), vec![64, 128, 256, 512, 512, 512]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::build(&cfg, &mut rng).unwrap();
        assert_eq!(d.params().by_name("conv1.kernel").unwrap().shape(), &[3, 3, 1, 64]);
        assert_eq!(d.params().by_name("head.kernel").unwrap().shape(), &[1, 1, 512, 1]);
    }

    #[test]
    fn rejects_multichannel_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::build(&DiscConfig { base_channels: 2, ..DiscConfig::default() }, &mut rng).unwrap();
        assert!(d.apply(&Tensor::ones([16, 16, 2])).is_err());
    }
}
