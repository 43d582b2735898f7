use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{embed_distribution, embed_tokens, Attention, GruCell};
use crate::tensor::Tensor;

/// Critic weights and the shared embedding table placed on a tape.
#[derive(Clone, Copy)]
pub struct BoundDiscriminator<'t> {
    pub(crate) emb: Var<'t>,
    pub(crate) gru1: GruCell<'t>,
    pub(crate) gru2: GruCell<'t>,
    pub(crate) att: Attention<'t>,
    pub(crate) w_ans: Var<'t>,
}

/// A caption as the critic reads it.
#[derive(Clone, Copy)]
pub enum CriticInput<'a, 't> {
    /// Token ids per step, `ids[t][b]`.
    Tokens(&'a [Vec<usize>]),
    /// Step-major `[steps · batch, |V|]` rows on the simplex.
    Dists(Var<'t>),
}

impl<'t> BoundDiscriminator<'t> {
    /// Per-step scores `W_ans · h'_t` as a `[steps, batch]` matrix.
    pub fn step_scores(&self, image: Var<'t>, input: CriticInput<'_, 't>, steps: usize) -> Result<Var<'t>> {
        let batch = image.shape()[0];
        let embedded = match input {
            CriticInput::Tokens(ids) => {
                if ids.len() != steps || ids.iter().any(|s| s.len() != batch) {
                    return Err(Error::contract(format!(
                        "critic: expected {steps} steps of {batch} ids"
                    )));
                }
                embed_tokens(self.emb, &ids.concat())?
            }
            CriticInput::Dists(d) => {
                if d.shape()[0] != steps * batch {
                    return Err(Error::Shape {
                        op: "critic distributions",
                        lhs: d.shape(),
                        rhs: vec![steps * batch, self.emb.shape()[0]],
                    });
                }
                embed_distribution(self.emb, d)?
            }
        };
        let tape = image.tape();
        let mut prev = tape.constant(Tensor::zeros(&[batch, self.gru1.d_h()]));
        let mut hs = Vec::with_capacity(steps);
        for gates in self.gru1.project_stacked(embedded, steps) {
            prev = self.gru1.step_projected(gates, prev)?;
            hs.push(prev);
        }
        // gru2 feeds nothing back, so all steps go through it at once
        let h = Var::concat_rows(&hs);
        let projected = self.att.project(image)?;
        let tiled = Var::concat_rows(&vec![projected; steps]);
        let v = self.att.fuse(h, tiled)?;
        let h_prime = self.gru2.step(h, v)?;
        Ok(h_prime.matmul(self.w_ans).reshape(&[steps, batch]))
    }

    /// Sequence scores: the mean of the step scores over unmasked steps.
    /// `mask` is `[batch, steps]`.
    pub fn score(&self, image: Var<'t>, input: CriticInput<'_, 't>, mask: &Tensor) -> Result<Var<'t>> {
        let (batch, steps) = mask.dims2();
        if image.shape()[0] != batch {
            return Err(Error::Shape {
                op: "critic mask",
                lhs: mask.shape().to_vec(),
                rhs: image.shape(),
            });
        }
        let scores = self.step_scores(image, input, steps)?;
        let mut weights = vec![0.0; steps * batch];
        for b in 0..batch {
            let len: f64 = mask.row(b).iter().sum();
            if len == 0.0 {
                return Err(Error::contract(format!("critic: item {b} has no unmasked steps")));
            }
            for t in 0..steps {
                weights[t * batch + b] = mask.at(b, t) / len;
            }
        }
        let tape = image.tape();
        Ok(scores
            .mul(tape.constant(Tensor::matrix(steps, batch, weights)))
            .sum_rows())
    }
}
