//! Reverse-mode automatic differentiation over [`Tensor4`] values.
//!
//! A [`Tape`] records each operation as a node holding its output value and
//! whatever the backward pass needs. Nodes are appended in evaluation order,
//! so walking the node list backwards is a reverse topological order.
//!
//! `backward` may run once per tape. Calling it again without
//! [`Tape::reset_grads`] is an error rather than silent accumulation.

use crate::error::{Error, Result};
use crate::ops::{self, InstanceNormCache};
use crate::strength;
use crate::tensor::{Shape4, Tensor4};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        cache: InstanceNormCache,
    },
    Relu(Var),
    Sigmoid(Var),
    Upsample(Var, usize),
    AvgPool(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x * s` where `s` is a one-element tensor.
    MulScalar(Var, Var),
    /// `gamma(alpha, beta)` with `beta` a one-element tensor.
    StrengthGate { beta: Var, alpha: f64 },
    Gram(Var),
    Mse(Var, Var),
    TotalVariation(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    requires_grad: bool,
    grad: Option<Tensor4>,
    op: Op,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor4) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor4) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor4, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient populated by the last `backward`, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor4> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clears every stored gradient and re-arms `backward`.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor4, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // -- recorded operations -------------------------------------------------

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            y,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (y, cache) = ops::instance_norm(self.value(x), self.value(gain), self.value(shift), eps)?;
        let rg = self.any_grad(&[x, gain, shift]);
        Ok(self.push(y, rg, Op::InstanceNorm { x, gain, shift, cache }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let rg = self.any_grad(&[x]);
        self.push(y, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        let rg = self.any_grad(&[x]);
        self.push(y, rg, Op::Sigmoid(x))
    }

    pub fn nearest_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::nearest_upsample(self.value(x), factor)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(y, rg, Op::Upsample(x, factor)))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::avg_pool(self.value(x), factor)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(y, rg, Op::AvgPool(x, factor)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(y, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::sub(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(y, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(y, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = ops::scale(self.value(x), factor);
        let rg = self.any_grad(&[x]);
        self.push(y, rg, Op::Scale(x, factor))
    }

    /// Multiply every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self
            .value(s)
            .item()
            .map_err(|_| Error::shape("mul_scalar", format!("scalar operand has shape {}", self.value(s).shape())))?;
        let y = ops::scale(self.value(x), k);
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(y, rg, Op::MulScalar(x, s)))
    }

    /// Residual gate `gamma(alpha, beta)` as a one-element tensor; the
    /// gradient flows to `beta` only.
    pub fn strength_gate(&mut self, beta: Var, alpha: f64) -> Result<Var> {
        let b = self
            .value(beta)
            .item()
            .map_err(|_| Error::shape("strength_gate", format!("beta has shape {}", self.value(beta).shape())))?;
        let y = Tensor4::scalar(strength::gamma(alpha, b));
        let rg = self.any_grad(&[beta]);
        Ok(self.push(y, rg, Op::StrengthGate { beta, alpha }))
    }

    /// Per-sample Gram matrices as `n x 1 x c x c`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let y = ops::gram(self.value(x))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(y, rg, Op::Gram(x)))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mse(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor4::scalar(y), rg, Op::Mse(a, b)))
    }

    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let y = ops::total_variation(self.value(x))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor4::scalar(y), rg, Op::TotalVariation(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = ops::sum(self.value(x));
        let rg = self.any_grad(&[x]);
        self.push(Tensor4::scalar(y), rg, Op::Sum(x))
    }

    // -- backward -------------------------------------------------------------

    /// Populate gradients of the scalar `loss` for every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autograd(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let shape = self.value(loss).shape();
        if shape.numel() != 1 {
            return Err(Error::Autograd(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Autograd(
                "loss does not depend on any parameter".into(),
            ));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor4>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::full(shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor4, grads: &mut [Option<Tensor4>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Tensor4| accumulate(&self.nodes, grads, v, contrib);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let (dx, dw, db) =
                    ops::conv2d_backward(self.value(*input), self.value(*weight), g, *stride, *pad)?;
                send(*input, dx);
                send(*weight, dw);
                send(*bias, db);
            }
            Op::InstanceNorm { x, gain, shift, cache } => {
                let (dx, dg, ds) = ops::instance_norm_backward(cache, self.value(*gain), g);
                send(*x, dx);
                send(*gain, dg);
                send(*shift, ds);
            }
            Op::Relu(x) => send(*x, ops::relu_backward(self.value(*x), g)),
            Op::Sigmoid(x) => send(*x, ops::sigmoid_backward(&node.value, g)),
            Op::Upsample(x, f) => send(*x, ops::nearest_upsample_backward(g, *f)),
            Op::AvgPool(x, f) => send(*x, ops::avg_pool_backward(g, *f)),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, ops::scale(g, -1.0));
            }
            Op::Mul(a, b) => {
                send(*a, ops::zip_map(g, self.value(*b), |d, y| d * y));
                send(*b, ops::zip_map(g, self.value(*a), |d, x| d * x));
            }
            Op::Scale(x, k) => send(*x, ops::scale(g, *k)),
            Op::MulScalar(x, s) => {
                let k = self.value(*s).item()?;
                send(*x, ops::scale(g, k));
                let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                send(*s, Tensor4::full(self.value(*s).shape(), ds));
            }
            Op::StrengthGate { beta, alpha } => {
                let b = self.value(*beta).item()?;
                let d = g.item()? * strength::gamma_grad_beta(*alpha, b);
                send(*beta, Tensor4::full(self.value(*beta).shape(), d));
            }
            Op::Gram(x) => send(*x, ops::gram_backward(self.value(*x), g)),
            Op::Mse(a, b) => {
                let da = ops::mse_backward(self.value(*a), self.value(*b), g.item()?);
                send(*b, ops::scale(&da, -1.0));
                send(*a, da);
            }
            Op::TotalVariation(x) => {
                send(*x, ops::total_variation_backward(self.value(*x), g.item()?))
            }
            Op::Sum(x) => {
                let k = g.item()?;
                send(*x, Tensor4::full(self.value(*x).shape(), k));
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor4>], v: Var, contrib: Tensor4) {
    if !nodes[v.0].requires_grad {
        return;
    }
    debug_assert_eq!(contrib.shape(), nodes[v.0].value.shape());
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Scalar loss helper: `sum_i weight_i * term_i` recorded on the tape.
pub fn weighted_sum(tape: &mut Tape, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        if tape.value(v).shape() != Shape4::scalar() {
            return Err(Error::shape("weighted_sum", "terms must be scalars"));
        }
        let scaled = tape.scale(v, w);
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("weighted_sum", "no terms"))
}
