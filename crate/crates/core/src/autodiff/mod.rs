//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every traced operation in insertion order together
//! with its output value. [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products into the trainable leaves.
//!
//! Tensors are dense, row-major and at most rank 3. There is no implicit
//! broadcasting: shapes are aligned explicitly with `expand_*`.

mod gradcheck;
mod ops;
mod plans;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

pub use gradcheck::{gradcheck, trace_scalar, Evaluation, GradcheckOptions, GradcheckReport, ParamCheck, Step};
pub use plans::{FilterBank, FramePlan, RateFilter};

use crate::error::{Error, Result};
use ops::Op;

pub const MAX_RANK: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::param(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Rows and row length when viewed as a matrix over the last axis.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len().checked_div(cols).unwrap_or(0), cols)
            }
        }
    }
}

/// A linear map on rank-1 tensors with an explicit adjoint.
pub trait LinearOperator: Send + Sync {
    fn in_len(&self) -> usize;
    fn out_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, g: &[f64]) -> Vec<f64>;
}

impl LinearOperator for crate::signal::Resampler {
    fn in_len(&self) -> usize {
        self.len_in()
    }
    fn out_len(&self) -> usize {
        self.len_out()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        crate::signal::Resampler::apply(self, x)
    }
    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        crate::signal::Resampler::adjoint(self, g)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the trainable leaves after [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.map.get(&v)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.map.get(&v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        if value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[*p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(id))
    }

    /// Reverse sweep from a scalar output. A tape can be differentiated once.
    pub fn backward(&mut self, out: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_node = &self.nodes[out.0];
        if out_node.value.len() != 1 {
            return Err(Error::NotScalar(out_node.value.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor {
            shape: out_node.value.shape.clone(),
            data: vec![1.0],
        });
        let mut result = Gradients::default();
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.trainable {
                result.map.insert(Var(i), g);
                continue;
            }
            for (parent, contrib) in ops::vjp(&self.nodes, i, &g) {
                if !self.nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.data.iter_mut().zip(&contrib.data).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(result)
    }

    /// Hash of every branch decision taken by non-smooth ops (relu sign,
    /// clamp region, min selection, segment index, smoother branch). Two
    /// traces with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.requires_grad {
                ops::hash_branches(&self.nodes, i, &mut h);
            }
        }
        h.finish()
    }
}

fn hash_bits<H: Hasher>(h: &mut H, bits: impl Iterator<Item = u8>) {
    for b in bits {
        b.hash(h);
    }
}

#[cfg(test)]
mod tests;
