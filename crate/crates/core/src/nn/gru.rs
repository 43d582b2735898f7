use rand::Rng;

use super::init::xavier_uniform;
use super::params::{join, Binder, Params};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gated recurrent unit weights.
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// ĥ  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruCellParams {
    pub fn new(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        GruCellParams {
            w_z: xavier_uniform(d_in, d_h, rng),
            w_r: xavier_uniform(d_in, d_h, rng),
            w_h: xavier_uniform(d_in, d_h, rng),
            u_z: xavier_uniform(d_h, d_h, rng),
            u_r: xavier_uniform(d_h, d_h, rng),
            u_h: xavier_uniform(d_h, d_h, rng),
            b_z: Tensor::zeros(&[d_h]),
            b_r: Tensor::zeros(&[d_h]),
            b_h: Tensor::zeros(&[d_h]),
        }
    }

    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        GruCellParams {
            w_z: Tensor::zeros(&[d_in, d_h]),
            w_r: Tensor::zeros(&[d_in, d_h]),
            w_h: Tensor::zeros(&[d_in, d_h]),
            u_z: Tensor::zeros(&[d_h, d_h]),
            u_r: Tensor::zeros(&[d_h, d_h]),
            u_h: Tensor::zeros(&[d_h, d_h]),
            b_z: Tensor::zeros(&[d_h]),
            b_r: Tensor::zeros(&[d_h]),
            b_h: Tensor::zeros(&[d_h]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_z.rows()
    }

    pub fn d_h(&self) -> usize {
        self.w_z.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d_in, d_h) = (self.d_in(), self.d_h());
        let named = self.named("gru");
        for (name, t) in named {
            let want: Vec<usize> = if name.contains(".w_") {
                vec![d_in, d_h]
            } else if name.contains(".u_") {
                vec![d_h, d_h]
            } else {
                vec![d_h]
            };
            if t.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: "gru params",
                    lhs: t.shape().to_vec(),
                    rhs: want,
                });
            }
        }
        Ok(())
    }

    pub fn bind<'t>(&self, binder: &mut Binder<'t>, prefix: &str) -> GruCell<'t> {
        let mut b = |name: &str, t: &Tensor| binder.bind(join(prefix, name), t);
        GruCell {
            w_z: b("w_z", &self.w_z),
            w_r: b("w_r", &self.w_r),
            w_h: b("w_h", &self.w_h),
            u_z: b("u_z", &self.u_z),
            u_r: b("u_r", &self.u_r),
            u_h: b("u_h", &self.u_h),
            b_z: b("b_z", &self.b_z),
            b_r: b("b_r", &self.b_r),
            b_h: b("b_h", &self.b_h),
            d_in: self.d_in(),
            d_h: self.d_h(),
        }
    }
}

impl Params for GruCellParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_z"), &self.w_z);
        f(join(prefix, "w_r"), &self.w_r);
        f(join(prefix, "w_h"), &self.w_h);
        f(join(prefix, "u_z"), &self.u_z);
        f(join(prefix, "u_r"), &self.u_r);
        f(join(prefix, "u_h"), &self.u_h);
        f(join(prefix, "b_z"), &self.b_z);
        f(join(prefix, "b_r"), &self.b_r);
        f(join(prefix, "b_h"), &self.b_h);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_z"), &mut self.w_z);
        f(join(prefix, "w_r"), &mut self.w_r);
        f(join(prefix, "w_h"), &mut self.w_h);
        f(join(prefix, "u_z"), &mut self.u_z);
        f(join(prefix, "u_r"), &mut self.u_r);
        f(join(prefix, "u_h"), &mut self.u_h);
        f(join(prefix, "b_z"), &mut self.b_z);
        f(join(prefix, "b_r"), &mut self.b_r);
        f(join(prefix, "b_h"), &mut self.b_h);
    }
}

/// GRU weights placed on a tape.
#[derive(Clone, Copy)]
pub struct GruCell<'t> {
    w_z: Var<'t>,
    w_r: Var<'t>,
    w_h: Var<'t>,
    u_z: Var<'t>,
    u_r: Var<'t>,
    u_h: Var<'t>,
    b_z: Var<'t>,
    b_r: Var<'t>,
    b_h: Var<'t>,
    d_in: usize,
    d_h: usize,
}

/// Input-side pre-activations `x·W_z`, `x·W_r`, `x·W_h` for one step.
#[derive(Clone, Copy)]
pub struct GruInput<'t> {
    z: Var<'t>,
    r: Var<'t>,
    h: Var<'t>,
}

impl<'t> GruCell<'t> {
    pub fn d_h(&self) -> usize {
        self.d_h
    }

    /// One recurrence step: `input` is `[batch, d_in]`, `state` is `[batch, d_h]`.
    pub fn step(&self, input: Var<'t>, state: Var<'t>) -> Result<Var<'t>> {
        let x = input.shape();
        if x.len() != 2 || x[1] != self.d_in {
            return Err(Error::Shape {
                op: "gru_step input",
                lhs: x,
                rhs: vec![self.d_in],
            });
        }
        let gates = self.project_input(input);
        self.step_projected(gates, state)
    }

    /// The input projections of a step, computable ahead of the recurrence.
    pub fn project_input(&self, input: Var<'t>) -> GruInput<'t> {
        GruInput {
            z: input.matmul(self.w_z),
            r: input.matmul(self.w_r),
            h: input.matmul(self.w_h),
        }
    }

    /// Projects `steps` inputs stacked row-wise in one product per gate.
    pub fn project_stacked(&self, stacked: Var<'t>, steps: usize) -> Vec<GruInput<'t>> {
        let rows = stacked.shape()[0];
        let batch = if steps == 0 { 0 } else { rows / steps };
        let z = stacked.matmul(self.w_z);
        let r = stacked.matmul(self.w_r);
        let h = stacked.matmul(self.w_h);
        (0..steps)
            .map(|t| {
                let (a, b) = (t * batch, (t + 1) * batch);
                GruInput {
                    z: z.slice_rows(a, b),
                    r: r.slice_rows(a, b),
                    h: h.slice_rows(a, b),
                }
            })
            .collect()
    }

    pub fn step_projected(&self, gates: GruInput<'t>, state: Var<'t>) -> Result<Var<'t>> {
        let s = state.shape();
        let xz = gates.z.shape();
        if s.len() != 2 || s[1] != self.d_h || s[0] != xz[0] {
            return Err(Error::Shape {
                op: "gru_step state",
                lhs: s,
                rhs: vec![xz[0], self.d_h],
            });
        }
        let batch = s[0];
        let z = gates
            .z
            .add(state.matmul(self.u_z))
            .add(self.b_z.broadcast_rows(batch))
            .sigmoid();
        let r = gates
            .r
            .add(state.matmul(self.u_r))
            .add(self.b_r.broadcast_rows(batch))
            .sigmoid();
        let candidate = gates
            .h
            .add(r.mul(state).matmul(self.u_h))
            .add(self.b_h.broadcast_rows(batch))
            .tanh();
        // h + z ⊙ (ĥ − h) == (1 − z) ⊙ h + z ⊙ ĥ
        Ok(state.add(z.mul(candidate.sub(state))))
    }
}
