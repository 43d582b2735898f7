use rand::Rng;

use super::config::{Objective, TrainConfig};
use crate::autograd::{Tape, Var};
use crate::data::{one_hot, Batch};
use crate::error::{Error, Result};
use crate::model::{BoundDiscriminator, CriticInput, Model};
use crate::nn::Binder;
use crate::tensor::Tensor;

/// Scalar pieces of a loss, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    /// Mean critic score of the real captions.
    pub real: f64,
    /// Mean critic score of the generated captions.
    pub fake: f64,
    pub penalty: f64,
}

/// Generator inputs per step: `<bos>`, then the targets shifted by one.
pub fn teacher_inputs(batch: &Batch) -> Vec<Vec<usize>> {
    (0..batch.steps()).map(|t| batch.input_ids(t)).collect()
}

/// `ε x + (1 − ε) x̃` with one ε per batch item. Both inputs are step-major
/// `[steps · batch, |V|]`; row `t · batch + b` uses `eps[b]`.
pub fn interpolate_with(x: &Tensor, x_tilde: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if x.shape() != x_tilde.shape() || x.ndim() != 2 || eps.is_empty() || !x.rows().is_multiple_of(eps.len()) {
        return Err(Error::Shape {
            op: "interpolate",
            lhs: x.shape().to_vec(),
            rhs: x_tilde.shape().to_vec(),
        });
    }
    let (batch, cols) = (eps.len(), x.cols());
    let mut out = x.clone();
    for (i, (o, &t)) in out.data_mut().iter_mut().zip(x_tilde.data()).enumerate() {
        let e = eps[(i / cols) % batch];
        *o = e * *o + (1.0 - e) * t;
    }
    Ok(out)
}

/// [`interpolate_with`] with ε drawn from U[0, 1].
pub fn interpolate(x: &Tensor, x_tilde: &Tensor, batch: usize, rng: &mut impl Rng) -> Result<(Tensor, Vec<f64>)> {
    let eps: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
    Ok((interpolate_with(x, x_tilde, &eps)?, eps))
}

/// `λ · mean_b (‖∇_{x̂_b} critic(x̂)_b‖ − 1)²` for any critic mapping
/// step-major `[steps · batch, |V|]` rows to `[batch]` scores. The result
/// stays differentiable with respect to whatever the critic closes over.
pub fn gradient_penalty_with<'t>(
    tape: &'t Tape,
    x_hat: &Tensor,
    batch: usize,
    lambda: f64,
    critic: impl FnOnce(Var<'t>) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    if lambda == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let rows = x_hat.rows();
    if batch == 0 || !rows.is_multiple_of(batch) {
        return Err(Error::contract(format!("gradient_penalty: {rows} rows do not split into batch {batch}")));
    }
    let x = tape.leaf(x_hat.clone());
    let scores = critic(x)?;
    if scores.shape() != [batch] {
        return Err(Error::contract(format!(
            "gradient_penalty: critic returned shape {:?} for batch {batch}",
            scores.shape()
        )));
    }
    // items are independent, so the gradient of the sum holds every item's gradient
    let g = tape.grad(scores.sum(), &[x], true)?[0];
    let norms = g
        .square()
        .sum_cols()
        .reshape(&[rows / batch, batch])
        .sum_rows()
        .add_scalar(1e-12)
        .sqrt();
    Ok(norms.add_scalar(-1.0).square().mean().scale(lambda))
}

pub fn gradient_penalty<'t>(
    d: &BoundDiscriminator<'t>,
    image: Var<'t>,
    x_hat: &Tensor,
    mask: &Tensor,
    lambda: f64,
) -> Result<Var<'t>> {
    gradient_penalty_with(image.tape(), x_hat, mask.rows(), lambda, |x| {
        d.score(image, CriticInput::Dists(x), mask)
    })
}

fn check_finite(v: Var<'_>, what: &str) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step: 0,
            what: what.to_string(),
        })
    }
}

/// Row `b` of the result is row `b + 1` of `image` (wrapping).
fn roll_rows(image: &Tensor) -> Tensor {
    let n = image.rows();
    let rows: Vec<usize> = (0..n).map(|b| (b + 1) % n).collect();
    let mut out = Vec::with_capacity(image.len());
    for r in rows {
        out.extend_from_slice(image.row(r));
    }
    Tensor::matrix(n, image.cols(), out)
}

/// Generated captions for `batch`: a constant teacher-forced generator pass
/// with dropout active, as step-major `[steps · batch, |V|]` rows.
pub fn fake_distributions(cfg: &TrainConfig, model: &Model, batch: &Batch, rng: &mut impl Rng) -> Result<Tensor> {
    let tape = Tape::new();
    tape.detached(|| {
        let mut scratch = Binder::new(&tape, false);
        let g = model.bind_generator(&mut scratch, false);
        let image = tape.constant(batch.image.clone());
        Ok(g.teacher_forced(image, &teacher_inputs(batch), &cfg.dropout, rng)?.dists.value())
    })
}

/// Critic loss on one batch. The critic's parameters (and the shared
/// table) are bound trainable on `binder`.
pub fn discriminator_loss<'t>(
    cfg: &TrainConfig,
    model: &Model,
    binder: &mut Binder<'t>,
    batch: &Batch,
    rng: &mut impl Rng,
) -> Result<(Var<'t>, LossParts)> {
    let fake_dists = fake_distributions(cfg, model, batch, rng)?;
    discriminator_loss_with(cfg, model, binder, batch, &fake_dists, rng)
}

/// [`discriminator_loss`] against given generated rows; `rng` only draws ε.
pub fn discriminator_loss_with<'t>(
    cfg: &TrainConfig,
    model: &Model,
    binder: &mut Binder<'t>,
    batch: &Batch,
    fake_dists: &Tensor,
    rng: &mut impl Rng,
) -> Result<(Var<'t>, LossParts)> {
    let tape = binder.tape();
    let d = model.bind_discriminator(binder, true);
    let image = tape.constant(batch.image.clone());
    let targets: Vec<Vec<usize>> = (0..batch.steps()).map(|t| batch.step_ids(t)).collect();
    let real = d.score(image, CriticInput::Tokens(&targets), &batch.mask)?;
    let fake = d.score(image, CriticInput::Dists(tape.constant(fake_dists.clone())), &batch.mask)?;
    let mut fake_term = match cfg.objective {
        Objective::WganGp => fake.mean(),
        Objective::LogLoss => fake.softplus().mean(),
    };
    if cfg.mismatched_pairs && batch.len() > 1 {
        let wrong = tape.constant(roll_rows(&batch.image));
        let mismatched = d.score(wrong, CriticInput::Tokens(&targets), &batch.mask)?;
        let term = match cfg.objective {
            Objective::WganGp => mismatched.mean(),
            Objective::LogLoss => mismatched.softplus().mean(),
        };
        fake_term = fake_term.add(term).scale(0.5);
    }
    // log-loss: −E log σ(D(x)) − E log(1 − σ(D(x̃))) = E softplus(−D(x)) + E softplus(D(x̃))
    let adversarial = match cfg.objective {
        Objective::WganGp => fake_term.sub(real.mean()),
        Objective::LogLoss => real.neg().softplus().mean().add(fake_term),
    };
    let use_penalty = cfg.objective == Objective::WganGp || cfg.penalize_log_loss;
    let penalty = if use_penalty && cfg.lambda_gp > 0.0 {
        let real_dists = one_hot(&targets.concat(), batch.vocab_size);
        let (x_hat, _) = interpolate(&real_dists, fake_dists, batch.len(), rng)?;
        gradient_penalty(&d, image, &x_hat, &batch.mask, cfg.lambda_gp)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    let loss = adversarial.add(penalty);
    check_finite(loss, "discriminator loss")?;
    Ok((
        loss,
        LossParts {
            loss: loss.item(),
            real: real.value().data().iter().sum::<f64>() / batch.len() as f64,
            fake: fake.value().data().iter().sum::<f64>() / batch.len() as f64,
            penalty: penalty.item(),
        },
    ))
}

/// Generator loss on one batch; only the generator is bound trainable.
pub fn generator_loss<'t>(
    cfg: &TrainConfig,
    model: &Model,
    binder: &mut Binder<'t>,
    batch: &Batch,
    rng: &mut impl Rng,
) -> Result<(Var<'t>, LossParts)> {
    let tape = binder.tape();
    let g = model.bind_generator(binder, true);
    let d = model.bind_discriminator(binder, false);
    let image = tape.constant(batch.image.clone());
    let rollout = g.teacher_forced(image, &teacher_inputs(batch), &cfg.dropout, rng)?;
    let fake = d.score(image, CriticInput::Dists(rollout.dists), &batch.mask)?;
    let loss = match cfg.objective {
        Objective::WganGp => fake.mean().neg(),
        // −E log σ(D(x̃))
        Objective::LogLoss => fake.neg().softplus().mean(),
    };
    check_finite(loss, "generator loss")?;
    Ok((
        loss,
        LossParts {
            loss: loss.item(),
            fake: fake.value().data().iter().sum::<f64>() / batch.len() as f64,
            ..LossParts::default()
        },
    ))
}
