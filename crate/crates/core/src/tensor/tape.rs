//! Reverse-mode differentiation over an append-only operation log.

use super::Tensor;
use crate::error::{contract_err, dim_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `needs[i]` tells whether input `i` wants a gradient; entries for inputs
/// that do not may be returned as `None`.
pub trait Backward {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Records values and the operations that produced them. Gradients are kept
/// for leaves only and accumulate across `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation result. The node requires grad when any input does.
    pub fn record(&mut self, value: Tensor, inputs: Vec<Var>, op: impl Backward + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push(value, inputs, op, requires_grad)
    }

    fn push(&mut self, value: Tensor, inputs: Vec<Var>, op: Option<Box<dyn Backward>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a leaf, zeros when it was never reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Propagates d(loss)/d(node) back to every leaf ancestor that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = pending[idx].take() else { continue };
            let node = &self.nodes[idx];
            let Some(op) = &node.op else {
                if node.requires_grad {
                    accumulate(&mut self.grads[idx], grad)?;
                }
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs)?;
            for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                if let (Some(g), true) = (g, need) {
                    accumulate(&mut pending[v.0], g)?;
                }
            }
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
        };
        let value = if ta.shape() == tb.shape() {
            ta.zip_map(tb, f)?
        } else if tb.numel() == 1 {
            let s = tb.data()[0];
            ta.map(|x| f(x, s))
        } else if ta.numel() == 1 {
            let s = ta.data()[0];
            tb.map(|y| f(s, y))
        } else {
            return Err(dim_err!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape()));
        };
        Ok(self.record(value, vec![a, b], Binary(kind)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.record(value, vec![a], Unary::Shift)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.record(value, vec![a], Unary::Scale(s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    /// |x|, with subgradient 0 at exactly 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.record(value, vec![a], Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.record(value, vec![a], Unary::Square)
    }

    /// max(x, 0); the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.record(value, vec![a], Unary::LeakyRelu(slope))
    }

    // ---- reductions and reshaping ----

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, vec![a], Reduce { scale: 1.0 })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let value = Tensor::scalar(self.value(a).sum() / n);
        self.record(value, vec![a], Reduce { scale: 1.0 / n })
    }

    /// Sum of several same-shaped values.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or_else(|| contract_err!("add_n of nothing"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let original = self.shape(a).to_vec();
        Ok(self.record(value, vec![a], Reshape(original)))
    }

    /// Concatenates feature maps along the channel (last) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let widths: Vec<usize> = values.iter().map(|t| *t.shape().last().unwrap_or(&1)).collect();
        let value = Tensor::concat_last(&values)?;
        Ok(self.record(value, parts.to_vec(), Concat(widths)))
    }

    /// Channel range `[start, start + len)` of a map.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let total = *self.shape(a).last().ok_or_else(|| dim_err!("slice of a scalar"))?;
        if start + len > total {
            return Err(dim_err!("channel slice {}..{} beyond {}", start, start + len, total));
        }
        let widths = [start, len, total - start - len];
        let value = self.value(a).split_last(&widths)?.swap_remove(1);
        Ok(self.record(value, vec![a], SliceChannels { start, total }))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => {
            acc.expect_same_shape(&g)?;
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
        None => *slot = Some(g),
    }
    Ok(())
}

/// Collapses a broadcast gradient back onto a one-element operand.
fn unbroadcast(g: Tensor, target: &Tensor) -> Result<Tensor> {
    if g.shape() == target.shape() {
        Ok(g)
    } else {
        Tensor::new(target.shape().to_vec(), vec![g.sum()])
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct Binary(BinaryKind);

impl Backward for Binary {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let times = |other: &Tensor| -> Tensor {
            if other.numel() == 1 {
                grad.scale(other.data()[0])
            } else if grad.numel() == other.numel() {
                grad.zip_map(other, |g, o| g * o).expect("shapes checked at record time")
            } else {
                // `other` was the broadcast side's partner: scalar gradient times tensor.
                other.scale(grad.data()[0])
            }
        };
        let ga = needs[0].then(|| match self.0 {
            BinaryKind::Add | BinaryKind::Sub => grad.clone(),
            BinaryKind::Mul => times(b),
        });
        let gb = needs[1].then(|| match self.0 {
            BinaryKind::Add => grad.clone(),
            BinaryKind::Sub => grad.scale(-1.0),
            BinaryKind::Mul => times(a),
        });
        Ok(vec![ga.map(|g| unbroadcast(g, a)).transpose()?, gb.map(|g| unbroadcast(g, b)).transpose()?])
    }
}

enum Unary {
    Shift,
    Scale(f64),
    Abs,
    Square,
    LeakyRelu(f64),
}

impl Backward for Unary {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let g = match *self {
            Unary::Shift => grad.clone(),
            Unary::Scale(s) => grad.scale(s),
            Unary::Abs => grad.zip_map(x, |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            })?,
            Unary::Square => grad.zip_map(x, |g, x| 2.0 * x * g)?,
            Unary::LeakyRelu(slope) => grad.zip_map(x, |g, x| if x > 0.0 { g } else { slope * g })?,
        };
        Ok(vec![Some(g)])
    }
}

struct Reduce {
    scale: f64,
}

impl Backward for Reduce {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.data()[0] * self.scale))])
    }
}

struct Reshape(Vec<usize>);

impl Backward for Reshape {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.reshape(self.0.clone())?)])
    }
}

struct Concat(Vec<usize>);

impl Backward for Concat {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let parts = grad.split_last(&self.0)?;
        Ok(parts.into_iter().zip(needs).map(|(p, &n)| n.then_some(p)).collect())
    }
}

struct SliceChannels {
    start: usize,
    total: usize,
}

impl Backward for SliceChannels {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let len = *grad.shape().last().unwrap_or(&1);
        let mut out = Tensor::zeros(inputs[0].shape().to_vec());
        let rows = out.numel() / self.total;
        let dst = out.data_mut();
        for r in 0..rows {
            dst[r * self.total + self.start..r * self.total + self.start + len]
                .copy_from_slice(&grad.data()[r * len..(r + 1) * len]);
        }
        Ok(vec![Some(out)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[1.0, 2.0]);
        let b = vec_leaf(&mut tape, &[3.0, 4.0]);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let zero = tape.constant(Tensor::scalar(0.0));
        let z = tape.mul(a, zero).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
        let five = vec_leaf(&mut tape, &[5.0]);
        let d = tape.sub(five, five).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[1.0, 2.0]);
        let b = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        assert!(matches!(tape.add(a, b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.3, -1.0, 2.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[2.0, 3.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn detached_leaf_keeps_zero_grad() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        let y = vec_leaf(&mut tape, &[1.0, 2.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad_or_zeros(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_is_additive() {
        let build = |tape: &mut Tape, x: Var| {
            let sq = tape.square(x);
            let l1 = tape.sum(sq);
            let ab = tape.abs(x);
            let l2 = tape.mean(ab);
            (l1, l2)
        };
        let data = [0.5, -1.5, 2.5];
        let mut joint = Tape::new();
        let x = vec_leaf(&mut joint, &data);
        let (l1, l2) = build(&mut joint, x);
        let total = joint.add(l1, l2).unwrap();
        joint.backward(total).unwrap();

        let mut split = Tape::new();
        let x2 = vec_leaf(&mut split, &data);
        let (m1, m2) = build(&mut split, x2);
        split.backward(m1).unwrap();
        split.backward(m2).unwrap();
        assert_eq!(joint.grad(x).unwrap(), split.grad(x2).unwrap());
    }

    #[test]
    fn scalar_broadcast_gradient_reduces() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0]);
        let s = tape.leaf(Tensor::scalar(2.0));
        let p = tape.mul(x, s).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(s).unwrap().data(), &[6.0]);
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn slice_and_concat_gradients_route_back() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([1, 2, 3], |i| i as f64));
        let mid = tape.slice_channels(x, 1, 1).unwrap();
        assert_eq!(tape.value(mid).data(), &[1.0, 4.0]);
        let loss = tape.sum(mid);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
