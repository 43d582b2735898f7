use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::nn::DropoutSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    WganGp,
    /// The original minimax log-loss, with the sigmoid applied inside the loss.
    LogLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub dropout: DropoutSpec,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub critic_ratio: usize,
    pub objective: Objective,
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Adds (real caption, wrong image) pairs to the critic's fake term.
    pub mismatched_pairs: bool,
    /// Also applies the gradient penalty under the log-loss objective.
    pub penalize_log_loss: bool,
    /// Decode length used for validation.
    pub max_len: usize,
    /// Ends training as soon as the validation metric reaches this value.
    pub target_metric: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gp: 9.0,
            dropout: DropoutSpec::default(),
            batch_size: 512,
            critic_ratio: 5,
            objective: Objective::WganGp,
            adam: AdamConfig::default(),
            patience: 5,
            max_epochs: 200,
            seed: 0,
            mismatched_pairs: false,
            penalize_log_loss: false,
            max_len: 20,
            target_metric: None,
        }
    }
}

impl TrainConfig {
    /// The small-scale settings used with the synthetic dataset.
    ///
    /// A higher learning rate than the default, and a longer patience: the
    /// validation BLEU of a fresh model sits at exactly 0 for the first
    /// dozen or so epochs, which a patience of 5 reads as a plateau.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            patience: 20,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dropout.validate()?;
        self.adam.validate()?;
        let bad = |what: &str| Err(Error::contract(format!("train config: {what}")));
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return bad("lambda_gp must be finite and non-negative");
        }
        if self.batch_size == 0 || self.critic_ratio == 0 || self.patience == 0 {
            return bad("batch_size, critic_ratio and patience must be at least 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }
}
