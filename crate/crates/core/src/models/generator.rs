use rand::Rng;

use super::{AdaINCode, CodeVars, ModelGraph, ParamStore};
use crate::error::{contract_err, Result};
use crate::layers::{self, adain, conv2d, glorot_uniform_init, Padding, ADAIN_EPS};
use crate::tensor::{Tape, Tensor, Var};

/// Number of AdaIN layers: one per encoder stage, the bottleneck, and one per
/// decoder stage.
pub const ADAIN_LAYERS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub adain_eps: f64,
    /// Skip connections carry encoder features taken before AdaIN (`true`) or
    /// after AdaIN + ReLU (`false`).
    pub skip_pre_adain: bool,
    /// Adds the input to the 1x1 projection, so the network predicts a correction.
    pub residual: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { stages: 4, base_channels: 64, kernel: 3, adain_eps: ADAIN_EPS, skip_pre_adain: true, residual: false }
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self { base_channels: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if 2 * self.stages + 1 != ADAIN_LAYERS {
            return Err(contract_err!("generator needs {} stages for {} AdaIN layers", (ADAIN_LAYERS - 1) / 2, ADAIN_LAYERS));
        }
        if self.base_channels == 0 || self.kernel % 2 == 0 {
            return Err(contract_err!("base_channels must be positive and the kernel odd"));
        }
        Ok(())
    }

    /// Channels of encoder stage `s` (0-based).
    pub fn stage_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.stages
    }

    /// Channel count of each AdaIN layer in forward order.
    pub fn adain_layer_channels(&self) -> Vec<usize> {
        let enc = (0..self.stages).map(|s| self.stage_channels(s));
        let dec = (0..self.stages).rev().map(|s| self.stage_channels(s));
        enc.chain(std::iter::once(self.bottleneck_channels())).chain(dec).collect()
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.stages
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    kernel: usize,
    bias: usize,
    stride: usize,
}

/// U-Net whose normalization layers are AdaIN; the code alone selects the
/// translation direction.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamStore,
    encoder: Vec<(ConvSlot, ConvSlot)>,
    bottleneck: ConvSlot,
    decoder: Vec<ConvSlot>,
    head: ConvSlot,
}

fn add_conv<R: Rng + ?Sized>(
    params: &mut ParamStore,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    rng: &mut R,
) -> Result<ConvSlot> {
    let kernel = params.push(format!("{name}.kernel"), glorot_uniform_init(&[k, k, c_in, c_out], rng)?);
    let bias = params.push(format!("{name}.bias"), Tensor::zeros([c_out]));
    Ok(ConvSlot { kernel, bias, stride })
}

impl Generator {
    pub fn build<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.kernel;
        let mut params = ParamStore::default();
        let mut encoder = Vec::with_capacity(cfg.stages);
        let mut c_in = 1;
        for s in 0..cfg.stages {
            let c = cfg.stage_channels(s);
            let conv = add_conv(&mut params, &format!("enc{}.conv", s + 1), k, c_in, c, 1, rng)?;
            let down = add_conv(&mut params, &format!("enc{}.down", s + 1), k, c, c, 2, rng)?;
            encoder.push((conv, down));
            c_in = c;
        }
        let bottleneck = add_conv(&mut params, "bottleneck.conv", k, c_in, cfg.bottleneck_channels(), 1, rng)?;
        let mut decoder = Vec::with_capacity(cfg.stages);
        let mut below = cfg.bottleneck_channels();
        for s in (0..cfg.stages).rev() {
            let c = cfg.stage_channels(s);
            decoder.push(add_conv(&mut params, &format!("dec{}.conv", s + 1), k, below + c, c, 1, rng)?);
            below = c;
        }
        let head = add_conv(&mut params, "head", 1, below, 1, 1, rng)?;
        Ok(Self { cfg: cfg.clone(), params, encoder, bottleneck, decoder, head })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Zeroes the 1x1 output projection.
    pub fn zero_head(&mut self) {
        for idx in [self.head.kernel, self.head.bias] {
            self.params.get_mut(idx).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn conv(&self, tape: &mut Tape, bound: &[Var], x: Var, slot: ConvSlot) -> Result<Var> {
        conv2d(tape, x, bound[slot.kernel], bound[slot.bias], slot.stride, Padding::Same)
    }

    /// Forward pass of an `[H, W, 1]` image under the given code. `bound` are
    /// this generator's parameters as returned by [`ParamStore::bind`].
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var, code: &CodeVars) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        self.check_code(tape, code)?;
        let eps = self.cfg.adain_eps;
        let mut adain_idx = 0;
        let mut norm = |tape: &mut Tape, h: Var| -> Result<Var> {
            let (m, v) = code.0[adain_idx];
            adain_idx += 1;
            let z = adain(tape, h, m, v, eps)?;
            Ok(tape.relu(z))
        };

        let mut h = x;
        let mut skips = Vec::with_capacity(self.cfg.stages);
        for &(conv, down) in &self.encoder {
            let pre = self.conv(tape, bound, h, conv)?;
            let post = norm(tape, pre)?;
            skips.push(if self.cfg.skip_pre_adain { pre } else { post });
            h = self.conv(tape, bound, post, down)?;
        }
        let b = self.conv(tape, bound, h, self.bottleneck)?;
        h = norm(tape, b)?;
        for (&slot, &skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = layers::upsample2x(tape, h)?;
            let cat = tape.concat(&[up, skip])?;
            let c = self.conv(tape, bound, cat, slot)?;
            h = norm(tape, c)?;
        }
        let out = self.conv(tape, bound, h, self.head)?;
        if self.cfg.residual {
            tape.add(out, x)
        } else {
            Ok(out)
        }
    }

    /// Convenience forward on plain values, without gradients.
    pub fn apply(&self, x: &Tensor, code: &AdaINCode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = code.bind(&mut tape);
        let y = self.forward(&mut tape, &bound, xv, &cv)?;
        Ok(tape.value(y).clone())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.cfg.size_multiple();
        match *shape {
            [h, w, 1] if h % m == 0 && w % m == 0 && h > 0 && w > 0 => Ok(()),
            _ => Err(contract_err!("generator input must be [H, W, 1] with H, W multiples of {m}, got {:?}", shape)),
        }
    }

    fn check_code(&self, tape: &Tape, code: &CodeVars) -> Result<()> {
        let channels = self.cfg.adain_layer_channels();
        if code.0.len() != channels.len() {
            return Err(contract_err!("AdaIN code has {} pairs, generator needs {}", code.0.len(), channels.len()));
        }
        for (i, (&(m, v), &c)) in code.0.iter().zip(&channels).enumerate() {
            if tape.shape(m) != [c] || tape.shape(v) != [c] {
                return Err(contract_err!("AdaIN pair {i} must have length {c}"));
            }
        }
        Ok(())
    }
}

impl ModelGraph for Generator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// The fixed denoising code: every mean 0, every variance 1.
pub fn constant_code(cfg: &GeneratorConfig) -> AdaINCode {
    AdaINCode {
        pairs: cfg.adain_layer_channels().into_iter().map(|c| (Tensor::zeros([c]), Tensor::ones([c]))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::param_count;
    use crate::tensor::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig { base_channels: 2, ..GeneratorConfig::default() }
    }

    fn random_code(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> AdaINCode {
        AdaINCode {
            pairs: cfg
                .adain_layer_channels()
                .into_iter()
                .map(|c| {
                    let m = Tensor::from_fn([c], |_| rng.random_range(-0.5..0.5));
                    let v = Tensor::from_fn([c], |_| rng.random_range(0.5..2.0));
                    (m, v)
                })
                .collect(),
        }
    }

    fn image(h: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([h, h, 1], |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn nine_adain_layers_with_mirrored_channels() {
        let cfg = GeneratorConfig::desk();
        assert_eq!(cfg.adain_layer_channels(), vec![16, 32, 64, 128, 256, 128, 64, 32, 16]);
        assert_eq!(cfg.adain_layer_channels().len(), ADAIN_LAYERS);
        let bad = GeneratorConfig { stages: 3, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn desk_generator_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GeneratorConfig::desk();
        let g = Generator::build(&cfg, &mut rng).unwrap();
        let y = g.apply(&image(128, 1), &constant_code(&cfg)).unwrap();
        assert_eq!(y.shape(), &[128, 128, 1]);
        assert!(y.all_finite());
    }

    #[test]
    fn skip_concat_widens_decoder_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GeneratorConfig::desk();
        let g = Generator::build(&cfg, &mut rng).unwrap();
        // stage 1 decoder sees upsampled stage-2 features (32) plus the stage-1 skip (16)
        assert_eq!(g.params().by_name("dec1.conv.kernel").unwrap().shape(), &[3, 3, 48, 16]);
        assert_eq!(g.params().by_name("dec4.conv.kernel").unwrap().shape(), &[3, 3, 384, 128]);
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = tiny();
        let mut g = Generator::build(&cfg, &mut rng).unwrap();
        g.zero_head();
        let code = random_code(&cfg, &mut rng);
        for c in [constant_code(&cfg), code] {
            assert_eq!(g.apply(&image(32, 2), &c).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn codes_switch_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny();
        let g = Generator::build(&cfg, &mut rng).unwrap();
        let x = image(32, 5);
        let a = g.apply(&x, &random_code(&cfg, &mut rng)).unwrap();
        let b = g.apply(&x, &random_code(&cfg, &mut rng)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
        // same inputs, same output
        let c = constant_code(&cfg);
        assert_eq!(g.apply(&x, &c).unwrap(), g.apply(&x, &c).unwrap());
    }

    #[test]
    fn bad_codes_and_inputs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny();
        let g = Generator::build(&cfg, &mut rng).unwrap();
        let mut short = constant_code(&cfg);
        short.pairs.pop();
        assert!(matches!(g.apply(&image(32, 1), &short), Err(crate::Error::Contract(_))));
        let mut wrong = constant_code(&cfg);
        wrong.pairs[3] = (Tensor::zeros([3]), Tensor::ones([3]));
        assert!(matches!(g.apply(&image(32, 1), &wrong), Err(crate::Error::Contract(_))));
        assert!(matches!(g.apply(&image(24, 1), &constant_code(&cfg)), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn constant_code_is_zero_mean_unit_variance() {
        let code = constant_code(&GeneratorConfig::desk());
        assert_eq!(code.pairs.len(), 9);
        assert!(code.pairs.iter().all(|(m, v)| m.data().iter().all(|&x| x == 0.0) && v.data().iter().all(|&x| x == 1.0)));
        code.validate(&GeneratorConfig::desk().adain_layer_channels()).unwrap();
    }

    #[test]
    fn gradient_wrt_code_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = tiny();
        let g = Generator::build(&cfg, &mut rng).unwrap();
        let code = random_code(&cfg, &mut rng);
        let x = image(32, 9);
        let weights = image(32, 10);
        for layer in [0, 4, 8] {
            for part in 0..2 {
                let probe = if part == 0 { code.pairs[layer].0.clone() } else { code.pairs[layer].1.clone() };
                let err = finite_difference_check(
                    |t, p| {
                        let bound = g.params().bind(t, false);
                        let mut cv = code.bind(t);
                        if part == 0 {
                            cv.0[layer].0 = p;
                        } else {
                            cv.0[layer].1 = p;
                        }
                        let xv = t.constant(x.clone());
                        let y = g.forward(t, &bound, xv, &cv)?;
                        let w = t.constant(weights.clone());
                        let prod = t.mul(y, w)?;
                        Ok(t.sum(prod))
                    },
                    &probe,
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-4, "layer {layer} part {part}: {err}");
            }
        }
    }

    #[test]
    fn parameter_total_for_desk_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::build(&GeneratorConfig::desk(), &mut rng).unwrap();
        // encoder, bottleneck, decoder and head, each 3x3 conv + bias except the 1x1 head
        let expected = 160 + 2_320 + 4_640 + 9_248 + 18_496 + 36_928 + 73_856 + 147_584 // encoder
            + 295_168 // bottleneck
            + 442_496 + 110_656 + 27_680 + 6_928 // decoder
            + 17; // head
        assert_eq!(param_count(&g), expected);
    }
}
