//! Adversarial, cycle-consistency and identity losses.
//!
//! Domain X holds high-dose (clean) high-frequency images, domain Y the
//! low-dose (noisy) ones. A [`Translator`] provides both directions; for the
//! switchable model `to_x` is `G(·; c_x)` and `to_y` is `G(·; F(c))`.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract_err, Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GanMode {
    /// Real → 1, fake → 0 for the critic; the generator drives fakes → 1.
    #[default]
    LeastSquares,
    /// L1 terms with real → 0 and fake → 1: the critic minimizes
    /// `|D(real)| + |1 − D(fake)|`, the generator maximizes it.
    L1,
}

impl fmt::Display for GanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GanMode::LeastSquares => "least-squares",
            GanMode::L1 => "l1",
        })
    }
}

impl FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least-squares" => Ok(GanMode::LeastSquares),
            "l1" => Ok(GanMode::L1),
            other => Err(Error::Config(format!("unknown gan_mode '{other}' (least-squares|l1)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub gan_mode: GanMode,
}

impl LossWeights {
    pub fn new(lambda_cyc: f64, lambda_id: f64, gan_mode: GanMode) -> Result<Self> {
        let w = Self { lambda_cyc, lambda_id, gan_mode };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc >= 0.0 && self.lambda_id >= 0.0) {
            return Err(contract_err!("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Both translation directions, recorded on a tape.
pub trait Translator {
    /// Y → X (denoising direction).
    fn to_x(&self, tape: &mut Tape, v: Var) -> Result<Var>;
    /// X → Y (noise-synthesis direction).
    fn to_y(&self, tape: &mut Tape, v: Var) -> Result<Var>;
}

/// Patch critic for one domain.
pub trait Critic {
    fn score(&self, tape: &mut Tape, v: Var) -> Result<Var>;
}

impl<F> Critic for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn score(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        self(tape, v)
    }
}

/// A translator assembled from two closures.
pub struct FnTranslator<A, B> {
    pub to_x: A,
    pub to_y: B,
}

impl<A, B> Translator for FnTranslator<A, B>
where
    A: Fn(&mut Tape, Var) -> Result<Var>,
    B: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn to_x(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        (self.to_x)(tape, v)
    }

    fn to_y(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        (self.to_y)(tape, v)
    }
}

/// Batch expectation: mean over items of each item's mean.
fn batch_mean(tape: &mut Tape, items: &[Var], mut f: impl FnMut(&mut Tape, Var) -> Result<Var>) -> Result<Var> {
    if items.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let mut terms = Vec::with_capacity(items.len());
    for &v in items {
        let per_pixel = f(tape, v)?;
        terms.push(tape.mean(per_pixel));
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.mul_scalar(total, 1.0 / items.len() as f64))
}

/// Mean of `(score − target)²`.
fn squared_to(tape: &mut Tape, scores: &[Var], target: f64) -> Result<Var> {
    batch_mean(tape, scores, |t, s| {
        let d = t.add_scalar(s, -target);
        Ok(t.square(d))
    })
}

/// Mean of `|score − target|`.
fn abs_to(tape: &mut Tape, scores: &[Var], target: f64) -> Result<Var> {
    batch_mean(tape, scores, |t, s| {
        let d = t.add_scalar(s, -target);
        Ok(t.abs(d))
    })
}

/// Mean absolute difference between paired values.
fn l1_between(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(a.len());
    for (&p, &q) in a.iter().zip(b) {
        let d = tape.sub(p, q)?;
        let ad = tape.abs(d);
        terms.push(tape.mean(ad));
    }
    if terms.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.mul_scalar(total, 1.0 / a.len() as f64))
}

fn map_all(tape: &mut Tape, items: &[Var], mut f: impl FnMut(&mut Tape, Var) -> Result<Var>) -> Result<Vec<Var>> {
    items.iter().map(|&v| f(tape, v)).collect()
}

/// Critic objective given already-computed scores.
pub fn disc_loss_from_scores(
    tape: &mut Tape,
    dy_real: &[Var],
    dy_fake: &[Var],
    dx_real: &[Var],
    dx_fake: &[Var],
    mode: GanMode,
) -> Result<Var> {
    let (real_target, fake_target) = match mode {
        GanMode::LeastSquares => (1.0, 0.0),
        GanMode::L1 => (0.0, 1.0),
    };
    let term = |tape: &mut Tape, s: &[Var], target: f64| match mode {
        GanMode::LeastSquares => squared_to(tape, s, target),
        GanMode::L1 => abs_to(tape, s, target),
    };
    let a = term(tape, dy_real, real_target)?;
    let b = term(tape, dy_fake, fake_target)?;
    let c = term(tape, dx_real, real_target)?;
    let d = term(tape, dx_fake, fake_target)?;
    tape.add_n(&[a, b, c, d])
}

/// Generator adversarial objective given critic scores of the fakes.
pub fn gen_adv_from_scores(tape: &mut Tape, dy_fake: &[Var], dx_fake: &[Var], mode: GanMode) -> Result<Var> {
    match mode {
        GanMode::LeastSquares => {
            let a = squared_to(tape, dy_fake, 1.0)?;
            let b = squared_to(tape, dx_fake, 1.0)?;
            tape.add(a, b)
        }
        GanMode::L1 => {
            let a = abs_to(tape, dy_fake, 1.0)?;
            let b = abs_to(tape, dx_fake, 1.0)?;
            let s = tape.add(a, b)?;
            Ok(tape.neg(s))
        }
    }
}

/// Critic loss over real and translated batches.
pub fn disc_loss(
    tape: &mut Tape,
    dx: &impl Critic,
    dy: &impl Critic,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    mode: GanMode,
) -> Result<Var> {
    let fake_y = map_all(tape, batch_x, |t, x| gen.to_y(t, x))?;
    let fake_x = map_all(tape, batch_y, |t, y| gen.to_x(t, y))?;
    let dy_real = map_all(tape, batch_y, |t, v| dy.score(t, v))?;
    let dy_fake = map_all(tape, &fake_y, |t, v| dy.score(t, v))?;
    let dx_real = map_all(tape, batch_x, |t, v| dx.score(t, v))?;
    let dx_fake = map_all(tape, &fake_x, |t, v| dx.score(t, v))?;
    disc_loss_from_scores(tape, &dy_real, &dy_fake, &dx_real, &dx_fake, mode)
}

pub fn gen_adv_loss(
    tape: &mut Tape,
    dx: &impl Critic,
    dy: &impl Critic,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    mode: GanMode,
) -> Result<Var> {
    let fake_y = map_all(tape, batch_x, |t, x| gen.to_y(t, x))?;
    let fake_x = map_all(tape, batch_y, |t, y| gen.to_x(t, y))?;
    let dy_fake = map_all(tape, &fake_y, |t, v| dy.score(t, v))?;
    let dx_fake = map_all(tape, &fake_x, |t, v| dx.score(t, v))?;
    gen_adv_from_scores(tape, &dy_fake, &dx_fake, mode)
}

/// `E|to_y(to_x(y)) − y| + E|to_x(to_y(x)) − x|`
pub fn cycle_loss(tape: &mut Tape, gen: &impl Translator, batch_x: &[Var], batch_y: &[Var]) -> Result<Var> {
    let fake_y = map_all(tape, batch_x, |t, x| gen.to_y(t, x))?;
    let fake_x = map_all(tape, batch_y, |t, y| gen.to_x(t, y))?;
    cycle_from_fakes(tape, gen, batch_x, batch_y, &fake_x, &fake_y)
}

fn cycle_from_fakes(
    tape: &mut Tape,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    fake_x: &[Var],
    fake_y: &[Var],
) -> Result<Var> {
    let back_y = map_all(tape, fake_x, |t, v| gen.to_y(t, v))?;
    let back_x = map_all(tape, fake_y, |t, v| gen.to_x(t, v))?;
    let a = l1_between(tape, &back_y, batch_y)?;
    let b = l1_between(tape, &back_x, batch_x)?;
    tape.add(a, b)
}

/// `E|to_y(y) − y| + E|to_x(x) − x|`
pub fn identity_loss(tape: &mut Tape, gen: &impl Translator, batch_x: &[Var], batch_y: &[Var]) -> Result<Var> {
    let same_y = map_all(tape, batch_y, |t, y| gen.to_y(t, y))?;
    let same_x = map_all(tape, batch_x, |t, x| gen.to_x(t, x))?;
    let a = l1_between(tape, &same_y, batch_y)?;
    let b = l1_between(tape, &same_x, batch_x)?;
    tape.add(a, b)
}

/// `adv + λ_cyc·cycle + λ_id·identity`.
pub fn weighted_total(tape: &mut Tape, adv: Var, cycle: Var, identity: Var, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let c = tape.mul_scalar(cycle, w.lambda_cyc);
    let i = tape.mul_scalar(identity, w.lambda_id);
    tape.add_n(&[adv, c, i])
}

pub fn total_gen_loss(
    tape: &mut Tape,
    dx: &impl Critic,
    dy: &impl Critic,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    w: &LossWeights,
) -> Result<Var> {
    Ok(generator_losses(tape, dx, dy, gen, batch_x, batch_y, w)?.total)
}

/// All generator-side terms, sharing the translated batches between the
/// adversarial and cycle terms.
#[derive(Clone, Copy, Debug)]
pub struct GenLosses {
    pub adv: Var,
    pub cycle: Var,
    pub identity: Var,
    pub total: Var,
    pub fakes: Fakes,
}

/// Where the translated batches live on the tape (first item of each batch).
#[derive(Clone, Copy, Debug)]
pub struct Fakes {
    pub fake_x: Var,
    pub fake_y: Var,
}

pub fn generator_losses(
    tape: &mut Tape,
    dx: &impl Critic,
    dy: &impl Critic,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    w: &LossWeights,
) -> Result<GenLosses> {
    let fake_y = map_all(tape, batch_x, |t, x| gen.to_y(t, x))?;
    let fake_x = map_all(tape, batch_y, |t, y| gen.to_x(t, y))?;
    generator_losses_with_fakes(tape, dx, dy, gen, batch_x, batch_y, &fake_x, &fake_y, w)
}

/// As [`generator_losses`], with the translated batches supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn generator_losses_with_fakes(
    tape: &mut Tape,
    dx: &impl Critic,
    dy: &impl Critic,
    gen: &impl Translator,
    batch_x: &[Var],
    batch_y: &[Var],
    fake_x: &[Var],
    fake_y: &[Var],
    w: &LossWeights,
) -> Result<GenLosses> {
    let dy_fake = map_all(tape, fake_y, |t, v| dy.score(t, v))?;
    let dx_fake = map_all(tape, fake_x, |t, v| dx.score(t, v))?;
    let adv = gen_adv_from_scores(tape, &dy_fake, &dx_fake, w.gan_mode)?;
    let cycle = cycle_from_fakes(tape, gen, batch_x, batch_y, fake_x, fake_y)?;
    let identity = identity_loss(tape, gen, batch_x, batch_y)?;
    let total = weighted_total(tape, adv, cycle, identity, w)?;
    let first = |v: &[Var]| v.first().copied().ok_or_else(|| contract_err!("empty batch"));
    Ok(GenLosses { adv, cycle, identity, total, fakes: Fakes { fake_x: first(fake_x)?, fake_y: first(fake_y)? } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Map = fn(&mut Tape, Var) -> Result<Var>;

    fn identity_map(_: &mut Tape, v: Var) -> Result<Var> {
        Ok(v)
    }

    fn zero_map(t: &mut Tape, v: Var) -> Result<Var> {
        Ok(t.mul_scalar(v, 0.0))
    }

    fn shift_one(t: &mut Tape, v: Var) -> Result<Var> {
        Ok(t.add_scalar(v, 1.0))
    }

    fn constant_critic(value: f64) -> impl Fn(&mut Tape, Var) -> Result<Var> {
        move |t: &mut Tape, v: Var| {
            let z = t.mul_scalar(v, 0.0);
            Ok(t.add_scalar(z, value))
        }
    }

    fn unit_batch(tape: &mut Tape, seed: u64, n: usize) -> Vec<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| tape.constant(Tensor::from_fn([4, 4, 1], |_| rng.random_range(0.0..1.0)))).collect()
    }

    fn value(t: &Tape, v: Var) -> f64 {
        t.value(v).item().unwrap()
    }

    #[test]
    fn perfect_critic_has_zero_loss() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 2);
        let by = unit_batch(&mut t, 2, 2);
        // critic says 1 on reals; generator's fakes are flagged via a shifted domain
        let fakes = FnTranslator { to_x: shift_one as Map, to_y: shift_one as Map };
        let critic = |t: &mut Tape, v: Var| -> Result<Var> {
            // scores 1 for values in [0,1), 0 for values ≥ 1
            let data = t.value(v).map(|x| if x < 1.0 { 1.0 } else { 0.0 });
            Ok(t.constant(data))
        };
        let l = disc_loss(&mut t, &critic, &critic, &fakes, &bx, &by, GanMode::LeastSquares).unwrap();
        assert_eq!(value(&t, l), 0.0);
    }

    #[test]
    fn half_critic_gives_one() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 3);
        let by = unit_batch(&mut t, 2, 3);
        let g = FnTranslator { to_x: identity_map as Map, to_y: identity_map as Map };
        let d = constant_critic(0.5);
        let l = disc_loss(&mut t, &d, &d, &g, &bx, &by, GanMode::LeastSquares).unwrap();
        assert!((value(&t, l) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disc_loss_ignores_batch_order() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 3);
        let by = unit_batch(&mut t, 2, 3);
        let g = FnTranslator { to_x: shift_one as Map, to_y: zero_map as Map };
        let d = |t: &mut Tape, v: Var| Ok(t.square(v));
        let a = disc_loss(&mut t, &d, &d, &g, &bx, &by, GanMode::LeastSquares).unwrap();
        let rx: Vec<Var> = bx.iter().rev().copied().collect();
        let ry: Vec<Var> = by.iter().rev().copied().collect();
        let b = disc_loss(&mut t, &d, &d, &g, &rx, &ry, GanMode::LeastSquares).unwrap();
        assert!((value(&t, a) - value(&t, b)).abs() < 1e-14);
    }

    #[test]
    fn generator_adversarial_cases() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 2);
        let by = unit_batch(&mut t, 2, 2);
        let g = FnTranslator { to_x: identity_map as Map, to_y: identity_map as Map };
        let fooled = gen_adv_loss(&mut t, &constant_critic(1.0), &constant_critic(1.0), &g, &bx, &by, GanMode::LeastSquares)
            .unwrap();
        assert_eq!(value(&t, fooled), 0.0);
        let caught = gen_adv_loss(&mut t, &constant_critic(0.0), &constant_critic(0.0), &g, &bx, &by, GanMode::LeastSquares)
            .unwrap();
        assert_eq!(value(&t, caught), 2.0);
    }

    #[test]
    fn l1_mode_labels_real_zero_fake_one() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 1);
        let by = unit_batch(&mut t, 2, 1);
        let g = FnTranslator { to_x: identity_map as Map, to_y: identity_map as Map };
        let d = constant_critic(0.25);
        // |0.25| + |1 − 0.25| for each domain
        let l = disc_loss(&mut t, &d, &d, &g, &bx, &by, GanMode::L1).unwrap();
        assert!((value(&t, l) - 2.0).abs() < 1e-15);
        let adv = gen_adv_loss(&mut t, &d, &d, &g, &bx, &by, GanMode::L1).unwrap();
        assert!((value(&t, adv) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn identity_translator_has_zero_cycle_and_identity() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 2);
        let by = unit_batch(&mut t, 2, 2);
        let g = FnTranslator { to_x: identity_map as Map, to_y: identity_map as Map };
        let c = cycle_loss(&mut t, &g, &bx, &by).unwrap();
        let i = identity_loss(&mut t, &g, &bx, &by).unwrap();
        assert_eq!((value(&t, c), value(&t, i)), (0.0, 0.0));
    }

    #[test]
    fn zero_translator_cycle_is_mean_magnitude() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 1);
        let by = unit_batch(&mut t, 2, 1);
        let g = FnTranslator { to_x: zero_map as Map, to_y: zero_map as Map };
        let c = cycle_loss(&mut t, &g, &bx, &by).unwrap();
        let expected = t.value(bx[0]).map(f64::abs).mean() + t.value(by[0]).map(f64::abs).mean();
        assert!((value(&t, c) - expected).abs() < 1e-15);
    }

    #[test]
    fn cycle_matches_two_pass_composition() {
        let (a, b, c, d) = (0.7, -0.2, 1.3, 0.05);
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 3, 2);
        let by = unit_batch(&mut t, 4, 2);
        let g = FnTranslator {
            to_x: move |t: &mut Tape, v: Var| {
                let s = t.mul_scalar(v, a);
                Ok(t.add_scalar(s, b))
            },
            to_y: move |t: &mut Tape, v: Var| {
                let s = t.mul_scalar(v, c);
                Ok(t.add_scalar(s, d))
            },
        };
        let l = cycle_loss(&mut t, &g, &bx, &by).unwrap();
        let mut expected = 0.0;
        for (&x, &y) in bx.iter().zip(&by) {
            let y_round = t.value(y).map(|v| (c * (a * v + b) + d - v).abs()).mean();
            let x_round = t.value(x).map(|v| (a * (c * v + d) + b - v).abs()).mean();
            expected += (y_round + x_round) / 2.0;
        }
        assert!((value(&t, l) - expected).abs() < 1e-14);
    }

    #[test]
    fn shift_by_one_identity_loss_is_two() {
        let mut t = Tape::new();
        let bx = unit_batch(&mut t, 1, 2);
        let by = unit_batch(&mut t, 2, 2);
        let g = FnTranslator { to_x: shift_one as Map, to_y: shift_one as Map };
        let i = identity_loss(&mut t, &g, &bx, &by).unwrap();
        assert!((value(&t, i) - 2.0).abs() < 1e-15);
        // swapping which batch feeds which term changes nothing here
        let j = identity_loss(&mut t, &g, &by, &bx).unwrap();
        assert_eq!(value(&t, i), value(&t, j));
    }

    #[test]
    fn weighted_total_cases() {
        let mut t = Tape::new();
        let adv = t.constant(Tensor::scalar(0.3));
        let cyc = t.constant(Tensor::scalar(0.2));
        let id = t.constant(Tensor::scalar(0.1));
        let cardiac = LossWeights::new(10.0, 5.0, GanMode::LeastSquares).unwrap();
        let v = weighted_total(&mut t, adv, cyc, id, &cardiac).unwrap();
        assert!((value(&t, v) - (0.3 + 2.0 + 0.5)).abs() < 1e-15);
        let chest = LossWeights::new(0.5, 0.1, GanMode::LeastSquares).unwrap();
        let v = weighted_total(&mut t, adv, cyc, id, &chest).unwrap();
        assert!((value(&t, v) - (0.3 + 0.1 + 0.01)).abs() < 1e-15);
        let z = t.constant(Tensor::scalar(0.0));
        let v = weighted_total(&mut t, z, z, z, &cardiac).unwrap();
        assert_eq!(value(&t, v), 0.0);
        assert!(LossWeights::new(-1.0, 0.0, GanMode::LeastSquares).is_err());
    }

    #[test]
    fn total_is_monotone_in_weights() {
        let mut t = Tape::new();
        let adv = t.constant(Tensor::scalar(0.3));
        let cyc = t.constant(Tensor::scalar(0.2));
        let id = t.constant(Tensor::scalar(0.1));
        let mut last = f64::NEG_INFINITY;
        for k in 0..5 {
            let w = LossWeights::new(k as f64, 1.0, GanMode::LeastSquares).unwrap();
            let v = weighted_total(&mut t, adv, cyc, id, &w).unwrap();
            assert!(value(&t, v) >= last);
            last = value(&t, v);
        }
    }

    #[test]
    fn loss_terms_pass_gradient_check() {
        // Linear-in-input translators and critics keep every term smooth; the
        // gradient is taken w.r.t. a translator scale parameter tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::from_fn([3, 3, 1], |_| rng.random_range(0.2..1.0));
        let y = Tensor::from_fn([3, 3, 1], |_| rng.random_range(-1.0..-0.2));
        let w = Tensor::from_fn([3, 3, 1], |_| rng.random_range(0.5..1.5));
        let scale = Tensor::from_fn([3, 3, 1], |_| rng.random_range(1.1..1.6));
        let weights = LossWeights::new(10.0, 5.0, GanMode::LeastSquares).unwrap();

        for term in 0..5 {
            let err = finite_difference_check(
                |t, s| {
                    let bx = [t.constant(x.clone())];
                    let by = [t.constant(y.clone())];
                    let wv = t.constant(w.clone());
                    let g = FnTranslator {
                        to_x: move |t: &mut Tape, v: Var| {
                            let p = t.mul(v, s)?;
                            Ok(t.add_scalar(p, 0.3))
                        },
                        to_y: move |t: &mut Tape, v: Var| {
                            let p = t.mul(v, s)?;
                            let p = t.mul(p, s)?;
                            Ok(t.add_scalar(p, -0.1))
                        },
                    };
                    let critic = move |t: &mut Tape, v: Var| {
                        let p = t.mul(v, wv)?;
                        Ok(t.add_scalar(p, 0.2))
                    };
                    match term {
                        0 => disc_loss(t, &critic, &critic, &g, &bx, &by, GanMode::LeastSquares),
                        1 => gen_adv_loss(t, &critic, &critic, &g, &bx, &by, GanMode::LeastSquares),
                        2 => cycle_loss(t, &g, &bx, &by),
                        3 => identity_loss(t, &g, &bx, &by),
                        _ => total_gen_loss(t, &critic, &critic, &g, &bx, &by, &weights),
                    }
                },
                &scale,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "term {term}: {err}");
        }
    }
}
