//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Computation is recorded on a [`Tape`]; each primitive applied to a [`Var`]
//! appends one node holding its value and the ids of its inputs. [`Tape::grad`]
//! sweeps the tape backwards from a scalar root. Every backward rule is itself
//! written in terms of [`Var`] primitives, so with `create_graph` set the
//! returned gradients are ordinary recorded values that can be differentiated
//! again (gradient penalties need exactly this).
//!
//! A tape lives for one training step and is dropped afterwards. It is not
//! `Sync`; tensors extracted from it with [`Var::value`] are plain values.
//!
//! Shape mismatches inside a primitive are programming errors and panic with
//! a message naming the operator and both shapes. Layers validate their
//! inputs up front and report [`Error`](crate::Error) instead.

mod backward;
mod check;
mod ops;

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use check::{central_difference, grad_check, max_relative_error};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Softplus(usize),
    Softmax(usize),
    Sum(usize),
    Expand(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { src: usize, start: usize },
    PadCols { src: usize, start: usize },
    SliceRows { src: usize, start: usize },
    PadRows { src: usize, start: usize },
    GatherRows { src: usize, ids: Arc<[usize]> },
    ScatterRows { src: usize, ids: Arc<[usize]> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Const => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Sigmoid(a) | Tanh(a) | Exp(a) | Log(a)
            | Sqrt(a) | Softplus(a) | Softmax(a) | Sum(a) | Expand(a) | SumRows(a)
            | BroadcastRows(a) | SumCols(a) | BroadcastCols(a) | Reshape(a) => vec![*a],
            ConcatCols(parts) | ConcatRows(parts) => parts.clone(),
            SliceCols { src, .. }
            | PadCols { src, .. }
            | SliceRows { src, .. }
            | PadRows { src, .. }
            | GatherRows { src, .. }
            | ScatterRows { src, .. } => vec![*src],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Append-only record of primitive applications.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    detached: Cell<bool>,
}

/// A tensor living on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A value that gradients never flow into.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Const, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs `f` with recording suspended: every value produced inside is a
    /// constant, whatever its inputs.
    pub fn detached<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.detached.replace(true);
        let out = f();
        self.detached.set(prev);
        out
    }

    fn push_node(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op, tracked });
        Var { tape: self, id }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let tracked = !self.detached.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].tracked)
        };
        if tracked {
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Const, false)
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Gradients of the scalar `root` with respect to each of `leaves`.
    ///
    /// Leaves that do not influence `root` receive zeros of their own shape.
    /// With `create_graph` the returned gradients are recorded and can be fed
    /// into further primitives and differentiated again; otherwise they are
    /// constants.
    pub fn grad<'t>(
        &'t self,
        root: Var<'t>,
        leaves: &[Var<'t>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t>>> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::contract("grad: root belongs to another tape"));
        }
        let root_value = root.value();
        if root_value.len() != 1 {
            return Err(Error::contract(format!(
                "grad: root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        for leaf in leaves {
            if !std::ptr::eq(leaf.tape, self) {
                return Err(Error::contract("grad: leaf belongs to another tape"));
            }
            if !self.nodes.borrow()[leaf.id].tracked {
                return Err(Error::contract(format!(
                    "grad: node {} is not recorded for differentiation",
                    leaf.id
                )));
            }
        }

        // Nodes between some requested leaf and the root.
        let relevant = {
            let nodes = self.nodes.borrow();
            let mut rel = vec![false; root.id + 1];
            for leaf in leaves {
                if leaf.id <= root.id {
                    rel[leaf.id] = true;
                }
            }
            for i in 0..=root.id {
                if !rel[i] && nodes[i].tracked {
                    rel[i] = nodes[i].op.inputs().iter().any(|&j| rel[j]);
                }
            }
            rel
        };

        let prev = self.detached.replace(!create_graph);
        let mut grads: Vec<Option<Var<'t>>> = vec![None; root.id + 1];
        grads[root.id] = Some(self.constant(Tensor::full(root_value.shape(), 1.0)));
        for id in (0..=root.id).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            for (input, contrib) in backward::rule(self, id, &op, g) {
                if !relevant[input] {
                    continue;
                }
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc.add(contrib),
                    None => contrib,
                });
            }
        }
        self.detached.set(prev);

        Ok(leaves
            .iter()
            .map(|leaf| match grads.get(leaf.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(leaf.value().shape())),
            })
            .collect())
    }

    /// First-order gradients as plain tensors.
    pub fn grad_values<'t>(&'t self, root: Var<'t>, leaves: &[Var<'t>]) -> Result<Vec<Tensor>> {
        Ok(self
            .grad(root, leaves, false)?
            .into_iter()
            .map(|g| g.value())
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The single value of a scalar variable.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}

#[cfg(test)]
mod tests;
