//! Named parameter collections and their binding onto a tape.

use std::collections::BTreeMap;

use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

/// A collection of named tensors with a fixed visiting order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    /// `(name, tensor)` pairs in visiting order.
    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name, t)));
        out
    }

    fn num_parameters(&self) -> usize {
        self.named("").iter().map(|(_, t)| t.len()).sum()
    }

    /// FNV-1a over every parameter bit pattern, in visiting order.
    fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        self.visit("", &mut |_, t| {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        hash
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.is_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Places parameters on a tape, either as differentiable leaves or as
/// constants, and remembers the leaves by name.
pub struct Binder<'t> {
    tape: &'t Tape,
    trainable: bool,
    leaves: Vec<(String, Var<'t>)>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape, trainable: bool) -> Self {
        Binder {
            tape,
            trainable,
            leaves: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn bind(&mut self, name: String, value: &Tensor) -> Var<'t> {
        if self.trainable {
            let v = self.tape.leaf(value.clone());
            self.leaves.push((name, v));
            v
        } else {
            self.tape.constant(value.clone())
        }
    }

    pub fn leaves(&self) -> &[(String, Var<'t>)] {
        &self.leaves
    }

    /// Gradients of `root` for every bound leaf, keyed by parameter name.
    pub fn gradients(&self, root: Var<'t>) -> crate::Result<BTreeMap<String, Tensor>> {
        let vars: Vec<Var<'t>> = self.leaves.iter().map(|(_, v)| *v).collect();
        let grads = self.tape.grad_values(root, &vars)?;
        Ok(self
            .leaves
            .iter()
            .map(|(n, _)| n.clone())
            .zip(grads)
            .collect())
    }
}
