use rand::Rng;

use super::init::xavier_uniform;
use super::params::{join, Binder, Params};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element-wise image gate: `v = h ⊙ (I · W_I)`.
///
/// Pooled image features carry no spatial axis, so attention reduces to a
/// per-unit gating of the recurrent state by a projection of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_i: Tensor,
}

impl AttentionParams {
    pub fn new(d_img: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            w_i: xavier_uniform(d_img, d_h, rng),
        }
    }

    pub fn d_img(&self) -> usize {
        self.w_i.rows()
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>, prefix: &str) -> Attention<'t> {
        Attention {
            w_i: binder.bind(join(prefix, "w_i"), &self.w_i),
        }
    }
}

impl Params for AttentionParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_i"), &self.w_i);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_i"), &mut self.w_i);
    }
}

#[derive(Clone, Copy)]
pub struct Attention<'t> {
    w_i: Var<'t>,
}

impl<'t> Attention<'t> {
    /// `I · W_I`; constant over time steps, so computed once per sequence.
    pub fn project(&self, image: Var<'t>) -> Result<Var<'t>> {
        let (i, w) = (image.shape(), self.w_i.shape());
        if i.len() != 2 || i[1] != w[0] {
            return Err(Error::Shape {
                op: "attention image",
                lhs: i,
                rhs: w,
            });
        }
        Ok(image.matmul(self.w_i))
    }

    /// Gates the state `h` with a projected image.
    pub fn fuse(&self, h: Var<'t>, projected: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (h.shape(), projected.shape());
        if a != b {
            return Err(Error::Shape {
                op: "attention_fuse",
                lhs: a,
                rhs: b,
            });
        }
        Ok(h.mul(projected))
    }
}

/// `h ⊙ (I · W_I)` in one call.
pub fn attention_fuse<'t>(att: &Attention<'t>, h: Var<'t>, image: Var<'t>) -> Result<Var<'t>> {
    att.fuse(h, att.project(image)?)
}
