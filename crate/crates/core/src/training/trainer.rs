use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::losses::{discriminator_loss, generator_loss};
use crate::autograd::Tape;
use crate::data::{batch_iter, Batch, CaptionRecord, FeatureTable, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{save_checkpoint, DecodeConfig, Model, Side};
use crate::nn::{Binder, Params};
use crate::par::Exec;

/// Everything that changes while training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub g_opt: Adam,
    pub d_opt: Adam,
    /// Drives batch order, reference choice, dropout masks and ε.
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, model: Model) -> Self {
        crate::heap::keep_heap_warm();
        TrainState {
            model,
            g_opt: Adam::new(cfg.adam.clone()),
            d_opt: Adam::new(cfg.adam.clone()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Critic loss of the last critic update.
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { step, what },
        other => other,
    }
}

/// `critic_ratio` critic updates on `batch`, then one generator update.
pub fn train_step(cfg: &TrainConfig, state: &mut TrainState, batch: &Batch) -> Result<StepReport> {
    let step = state.step;
    let mut report = StepReport {
        step,
        ..StepReport::default()
    };
    for _ in 0..cfg.critic_ratio {
        let tape = Tape::new();
        let mut binder = Binder::new(&tape, true);
        let (loss, parts) =
            discriminator_loss(cfg, &state.model, &mut binder, batch, &mut state.rng).map_err(|e| at_step(e, step))?;
        let grads = binder.gradients(loss)?;
        state
            .d_opt
            .step(&mut state.model, Side::Discriminator, &grads)
            .map_err(|e| at_step(e, step))?;
        report.d_loss = parts.loss;
        report.penalty = parts.penalty;
    }
    let tape = Tape::new();
    let mut binder = Binder::new(&tape, true);
    let (loss, parts) =
        generator_loss(cfg, &state.model, &mut binder, batch, &mut state.rng).map_err(|e| at_step(e, step))?;
    let grads = binder.gradients(loss)?;
    state
        .g_opt
        .step(&mut state.model, Side::Generator, &grads)
        .map_err(|e| at_step(e, step))?;
    report.g_loss = parts.loss;
    if !state.model.all_finite() {
        return Err(Error::NonFinite {
            step,
            what: "parameters after update".into(),
        });
    }
    state.step += 1;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the metric has not improved for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// `(epoch, metric)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Decision {
        let improved = match self.best {
            None => !metric.is_nan(),
            Some((_, b)) => metric > b,
        };
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
            return Decision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

/// Scores a model after each epoch; higher is better.
pub trait Validator {
    fn validate(&mut self, model: &Model, epoch: usize) -> Result<f64>;
}

impl<F: FnMut(&Model, usize) -> Result<f64>> Validator for F {
    fn validate(&mut self, model: &Model, epoch: usize) -> Result<f64> {
        self(model, epoch)
    }
}

/// Corpus BLEU-4 of greedy captions on a validation split.
pub struct BleuValidator<'a> {
    pub records: &'a [CaptionRecord],
    pub features: &'a FeatureTable,
    pub vocab: &'a Vocabulary,
    pub decode: DecodeConfig,
    pub exec: Exec,
}

impl Validator for BleuValidator<'_> {
    fn validate(&mut self, model: &Model, _epoch: usize) -> Result<f64> {
        let eval = evaluate(model, self.records, self.features, self.vocab, &self.decode, self.exec)?;
        Ok(eval.report.bleu4)
    }
}

#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [CaptionRecord],
    pub features: &'a FeatureTable,
    pub vocab: &'a Vocabulary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
    pub val_bleu4: f64,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-scoring epoch.
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Whether `target_metric` was reached.
    pub reached_target: bool,
}

/// Trains until the validator stops improving for `patience` epochs or
/// `max_epochs` pass. With a `run_dir`, appends one JSON line per epoch to
/// `history.jsonl` and keeps the best checkpoint in `best/`.
pub fn train_loop(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    model: Model,
    validator: &mut dyn Validator,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("train_loop: empty training set"));
    }
    if data.vocab.len() != model.config.vocab_size || data.features.d_img() != model.config.d_img {
        return Err(Error::contract(format!(
            "train_loop: data has |V| {} and d_img {}, model expects {} and {}",
            data.vocab.len(),
            data.features.d_img(),
            model.config.vocab_size,
            model.config.d_img
        )));
    }
    let mut history_file = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(File::create(dir.join("history.jsonl"))?)
        }
        None => None,
    };
    let start = Instant::now();
    let mut state = TrainState::new(cfg, model);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_model = state.model.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut reached_target = false;
    for epoch in 1..=cfg.max_epochs {
        let batches = batch_iter(data.train, data.features, cfg.batch_size, data.vocab.len(), &mut state.rng)?;
        let (mut d, mut g, mut p, mut n) = (0.0, 0.0, 0.0, 0usize);
        for batch in batches {
            let r = train_step(cfg, &mut state, &batch)?;
            d += r.d_loss;
            g += r.g_loss;
            p += r.penalty;
            n += 1;
        }
        let metric = validator.validate(&state.model, epoch)?;
        let decision = stopper.observe(epoch, metric);
        if decision == Decision::Improved {
            best_model = state.model.clone();
            if let Some(dir) = run_dir {
                save_checkpoint(&dir.join("best"), &best_model, Some(data.vocab))?;
            }
        }
        let record = EpochRecord {
            epoch,
            steps: n,
            d_loss: d / n as f64,
            g_loss: g / n as f64,
            penalty: p / n as f64,
            val_bleu4: metric,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: d_loss {:.4} g_loss {:.4} penalty {:.4} val_bleu4 {:.4}",
            record.d_loss,
            record.g_loss,
            record.penalty,
            record.val_bleu4
        );
        if let Some(f) = &mut history_file {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
        if cfg.target_metric.is_some_and(|t| metric >= t) {
            reached_target = true;
            break;
        }
        if decision == Decision::Stop {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_metric) = stopper.best().unwrap_or((0, f64::NAN));
    if best_epoch == 0 {
        best_model = state.model.clone();
    }
    debug_assert!(best_model.all_finite());
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        best_metric,
        history,
        stopped_early,
        reached_target,
    })
}
