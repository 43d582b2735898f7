use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::autograd::{Tape, Var};
use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{dropout_apply, embed_tokens, Attention, Binder, DropoutSpec, GruCell, GruInput, Site};
use crate::tensor::Tensor;

/// Generator weights placed on a tape.
#[derive(Clone, Copy)]
pub struct BoundGenerator<'t> {
    pub(crate) emb: Var<'t>,
    pub(crate) gru1: GruCell<'t>,
    pub(crate) gru2: GruCell<'t>,
    pub(crate) att: Attention<'t>,
    pub(crate) w_proj: Var<'t>,
    pub(crate) vocab_size: usize,
}

/// Values of one generator step for a batch.
#[derive(Clone, Debug)]
pub struct StepState {
    pub h: Tensor,
    pub v: Tensor,
    pub h_prime: Tensor,
    pub p: Option<Tensor>,
}

/// Output of a teacher-forced pass.
pub struct Rollout<'t> {
    /// `[steps · batch, |V|]`, step-major: row `t · batch + b` is item `b` at step `t`.
    pub dists: Var<'t>,
    pub steps: usize,
    pub batch: usize,
    hidden: Vec<(Var<'t>, Var<'t>, Var<'t>)>,
}

impl<'t> Rollout<'t> {
    /// `[batch, |V|]` distributions of step `t`.
    pub fn step(&self, t: usize) -> Var<'t> {
        self.dists.slice_rows(t * self.batch, (t + 1) * self.batch)
    }

    pub fn states(&self) -> Vec<StepState> {
        self.hidden
            .iter()
            .enumerate()
            .map(|(t, (h, v, hp))| StepState {
                h: h.value(),
                v: v.value(),
                h_prime: hp.value(),
                p: Some(self.step(t).value()),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    #[default]
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub strategy: DecodeStrategy,
    pub dropout_active: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: 20,
            strategy: DecodeStrategy::Greedy,
            dropout_active: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::contract("decode: max_len must be at least 1"));
        }
        Ok(())
    }
}

impl<'t> BoundGenerator<'t> {
    /// One recurrence step; returns `(h, v, h')`.
    fn step(
        &self,
        gates: GruInput<'t>,
        prev: Var<'t>,
        projected: Var<'t>,
        dropout: &DropoutSpec,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let h = self.gru1.step_projected(gates, prev)?;
        let h = dropout_apply(dropout, Site::Hidden, h, rng);
        let v = self.att.fuse(h, projected)?;
        let h_prime = self.gru2.step(h, v)?;
        Ok((h, v, h_prime))
    }

    /// Teacher-forced pass. `inputs[t]` holds the batch's input ids at step
    /// `t` (`<bos>` first, then the ground truth shifted by one).
    pub fn teacher_forced(
        &self,
        image: Var<'t>,
        inputs: &[Vec<usize>],
        dropout: &DropoutSpec,
        rng: &mut impl Rng,
    ) -> Result<Rollout<'t>> {
        let steps = inputs.len();
        let batch = image.shape()[0];
        if steps == 0 {
            return Err(Error::contract("teacher_forced: need at least one step"));
        }
        if let Some(bad) = inputs.iter().find(|ids| ids.len() != batch) {
            return Err(Error::contract(format!(
                "teacher_forced: step has {} ids for a batch of {batch}",
                bad.len()
            )));
        }
        let flat: Vec<usize> = inputs.concat();
        let embedded = dropout_apply(dropout, Site::Embedding, embed_tokens(self.emb, &flat)?, rng);
        let gates = self.gru1.project_stacked(embedded, steps);
        let projected = self.att.project(image)?;
        let tape = image.tape();
        let mut prev = tape.constant(Tensor::zeros(&[batch, self.gru1.d_h()]));
        let mut hidden = Vec::with_capacity(steps);
        for g in gates {
            let state = self.step(g, prev, projected, dropout, rng)?;
            prev = state.2;
            hidden.push(state);
        }
        let stacked = Var::concat_rows(&hidden.iter().map(|s| s.2).collect::<Vec<_>>());
        let dists = stacked.matmul(self.w_proj).softmax();
        Ok(Rollout {
            dists,
            steps,
            batch,
            hidden,
        })
    }

    /// Greedy decoding of a batch of images. Each sequence ends before its
    /// first `<eos>`; `<pad>` and `<bos>` are dropped from the output.
    pub fn greedy_decode(
        &self,
        image: Var<'t>,
        cfg: &DecodeConfig,
        dropout: &DropoutSpec,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<usize>>> {
        cfg.validate()?;
        let dropout = if cfg.dropout_active {
            *dropout
        } else {
            (*dropout).inactive()
        };
        let tape = image.tape();
        tape.detached(|| {
            let batch = image.shape()[0];
            let projected = self.att.project(image)?;
            let mut prev = tape.constant(Tensor::zeros(&[batch, self.gru1.d_h()]));
            let mut ids = vec![BOS; batch];
            let mut out = vec![Vec::new(); batch];
            let mut done = vec![false; batch];
            for _ in 0..cfg.max_len {
                let x = dropout_apply(&dropout, Site::Embedding, embed_tokens(self.emb, &ids)?, rng);
                let (_, _, h_prime) = self.step(self.gru1.project_input(x), prev, projected, &dropout, rng)?;
                prev = h_prime;
                ids = h_prime.matmul(self.w_proj).value().argmax_rows();
                for b in 0..batch {
                    if done[b] {
                        continue;
                    }
                    match ids[b] {
                        EOS => done[b] = true,
                        PAD | BOS => {}
                        id => out[b].push(id),
                    }
                }
                if done.iter().all(|&d| d) {
                    break;
                }
            }
            Ok(out)
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

impl Model {
    /// Greedy captions for each row of `images`, computed on a private tape.
    pub fn decode(&self, images: &Tensor, cfg: &DecodeConfig, dropout: &DropoutSpec, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape, false);
        let g = self.bind_generator(&mut binder, false);
        g.greedy_decode(tape.constant(images.clone()), cfg, dropout, rng)
    }

    /// Greedy captions with dropout off.
    pub fn decode_greedy(&self, images: &Tensor, max_len: usize) -> Result<Vec<Vec<usize>>> {
        let cfg = DecodeConfig {
            max_len,
            ..DecodeConfig::default()
        };
        // no randomness is drawn with dropout off
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.decode(images, &cfg, &DropoutSpec::off(), &mut rng)
    }
}
