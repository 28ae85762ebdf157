//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to a [`Tape`]. A node stores its value and,
//! unless it is a leaf, the [`BackwardRule`] that maps the gradient of its
//! output onto gradients of its parents. Nodes are only ever appended, so
//! creation order is already a topological order and [`Tape::backward`] is a
//! single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Read-only view of node values handed to backward rules.
pub struct Values<'a, T: Real> {
    nodes: &'a [Node<T>],
}

impl<T: Real> Values<'_, T> {
    pub fn get(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }
}

/// Backward half of a differentiable operation.
pub trait BackwardRule<T: Real>: Send {
    fn op_name(&self) -> &'static str;

    fn parents(&self) -> Vec<Var>;

    /// Returns one gradient per parent, in [`BackwardRule::parents`] order,
    /// each shaped like that parent's value.
    fn backward(
        &self,
        values: &Values<'_, T>,
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    rule: Option<Box<dyn BackwardRule<T>>>,
    grad: Option<Tensor<T>>,
}

/// Outcome of a backward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardReport {
    /// Nodes reachable from the loss, leaves included.
    pub reachable: usize,
    /// Backward rules executed; each reachable non-leaf node runs exactly once.
    pub rules_executed: usize,
}

/// Recording of one forward computation.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node; handles from before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Adds an input (parameter, data or constant) node.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    /// Adds the output of a differentiable operation.
    pub fn record(&mut self, value: Tensor<T>, rule: Box<dyn BackwardRule<T>>) -> Var {
        debug_assert!(rule.parents().iter().all(|p| p.0 < self.nodes.len()));
        self.push(value, Some(rule))
    }

    fn push(&mut self, value: Tensor<T>, rule: Option<Box<dyn BackwardRule<T>>>) -> Var {
        self.nodes.push(Node {
            value,
            rule,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Handles of every node, in creation (topological) order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0]
            .rule
            .as_ref()
            .map_or("leaf", |r| r.op_name())
    }

    /// Gradient of the last backward sweep; zeros if the node was unreachable.
    pub fn grad(&self, var: Var) -> Tensor<T> {
        let node = &self.nodes[var.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn take_grad(&mut self, var: Var) -> Tensor<T> {
        let node = &mut self.nodes[var.0];
        node.grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    /// Populates gradients of `loss` with respect to every reachable node.
    ///
    /// Gradients from a previous sweep are discarded first. A node with several
    /// consumers accumulates their contributions additively.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }

        let mut reachable = vec![false; loss.0 + 1];
        reachable[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if !reachable[i] {
                continue;
            }
            if let Some(rule) = &self.nodes[i].rule {
                for p in rule.parents() {
                    reachable[p.0] = true;
                }
            }
        }

        let seed = Tensor::full(&loss_shape, T::one())?;
        self.nodes[loss.0].grad = Some(seed);

        let mut rules_executed = 0;
        for i in (0..=loss.0).rev() {
            if !reachable[i] {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let (Some(rule), Some(grad)) = (&node.rule, &node.grad) else {
                continue;
            };
            let parents = rule.parents();
            let contributions = rule.backward(&Values { nodes: head }, &node.value, grad)?;
            rules_executed += 1;
            debug_assert_eq!(parents.len(), contributions.len());
            for (p, g) in parents.into_iter().zip(contributions) {
                let target = &mut head[p.0];
                if g.shape() != target.value.shape() {
                    return Err(Error::Shape(format!(
                        "{} produced gradient {:?} for parent of shape {:?}",
                        rule.op_name(),
                        g.shape(),
                        target.value.shape()
                    )));
                }
                match &mut target.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        Ok(BackwardReport {
            reachable: reachable.iter().filter(|&&r| r).count(),
            rules_executed,
        })
    }

    /// Elementwise `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    /// Elementwise `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    /// Elementwise `a * b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Multiplies by a constant, recorded as a scalar leaf.
    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let c = self.leaf(Tensor::scalar(factor));
        self.mul(c, a)
    }

    fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let value = op.forward(va, vb)?;
        Ok(self.record(value, Box::new(BinaryRule { op, a, b })))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.record(Tensor::scalar(total), Box::new(SumRule { input: a }))
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    fn apply<T: Real>(self, x: T, y: T) -> T {
        match self {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        }
    }

    fn forward<T: Real>(self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() == b.shape() {
            return a.zip_map(b, |x, y| self.apply(x, y));
        }
        // Only scalar-with-tensor broadcasting is supported.
        if let Some(s) = a.item() {
            return Ok(b.map(|y| self.apply(s, y)));
        }
        if let Some(s) = b.item() {
            return Ok(a.map(|x| self.apply(x, s)));
        }
        Err(Error::Shape(format!(
            "{self:?} operands {:?} and {:?} are incompatible",
            a.shape(),
            b.shape()
        )))
    }
}

struct BinaryRule {
    op: BinaryOp,
    a: Var,
    b: Var,
}

/// Reduces a full-shaped gradient onto an operand that may have been broadcast.
fn unbroadcast<T: Real>(grad: Tensor<T>, operand: &Tensor<T>) -> Tensor<T> {
    if grad.shape() == operand.shape() {
        grad
    } else {
        Tensor::from_parts(operand.shape().to_vec(), vec![grad.sum()])
    }
}

fn broadcast_mul<T: Real>(grad: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    match other.item() {
        Some(s) if other.shape() != grad.shape() => grad.map(|g| g * s),
        _ => grad
            .zip_map(other, |g, o| g * o)
            .expect("operand shapes checked in forward"),
    }
}

impl<T: Real> BackwardRule<T> for BinaryRule {
    fn op_name(&self) -> &'static str {
        match self.op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let va = values.get(self.a);
        let vb = values.get(self.b);
        let (ga, gb) = match self.op {
            BinaryOp::Add => (grad.clone(), grad.clone()),
            BinaryOp::Sub => (grad.clone(), grad.map(|g| -g)),
            BinaryOp::Mul => (broadcast_mul(grad, vb), broadcast_mul(grad, va)),
        };
        Ok(vec![unbroadcast(ga, va), unbroadcast(gb, vb)])
    }
}

struct SumRule {
    input: Var,
}

impl<T: Real> BackwardRule<T> for SumRule {
    fn op_name(&self) -> &'static str {
        "sum"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let g = grad.data()[0];
        Ok(vec![Tensor::full(values.get(self.input).shape(), g)?])
    }
}

/// Maximum relative disagreement between the tape gradient of a scalar
/// function and central finite differences, over every element of `x`.
///
/// Each element's error is `|analytic - numeric| / max(1, |numeric|)` with
/// `numeric = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`. Intended for
/// `f64`; an `f32` run only makes sense as a coarse smoke check.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Contract(format!("grad_check eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&mut tape, input)?;
    tape.backward(out)?;
    let analytic = tape.take_grad(input);

    let eval = |probe: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.leaf(probe);
        let out = f(&mut tape, input)?;
        tape.value(out)
            .item()
            .map(Real::as_f64)
            .ok_or_else(|| Error::Contract("grad_check function must return a scalar".into()))
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] = T::lit(x.data()[i].as_f64() + eps);
        let mut minus = x.clone();
        minus.data_mut()[i] = T::lit(x.data()[i].as_f64() - eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data()[i].as_f64() - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
