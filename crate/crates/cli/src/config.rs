//! The run configuration: a flat JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use capgan_core::model::ModelConfig;
use capgan_core::nn::DropoutSpec;
use capgan_core::training::{AdamConfig, Objective, TrainConfig};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, ValueEnum};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CAPGAN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveArg {
    #[value(name = "wgan_gp")]
    WganGp,
    #[value(name = "log_loss")]
    LogLoss,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::WganGp => Objective::WganGp,
            ObjectiveArg::LogLoss => Objective::LogLoss,
        }
    }
}

/// Everything `train` and `sweep` need, after merging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_captions: PathBuf,
    pub val_captions: PathBuf,
    pub features: PathBuf,
    pub vocab: Option<PathBuf>,
    pub glove: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub min_count: usize,
    pub max_len: usize,
    pub d_img: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub split_embedding: bool,
    pub lambda_gp: f64,
    pub p_embedding: f64,
    pub p_hidden: f64,
    pub batch_size: usize,
    pub critic_ratio: usize,
    pub objective: ObjectiveArg,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mismatched_pairs: bool,
    pub penalize_log_loss: bool,
}

/// The file form: every key optional, unknown keys rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train_captions: Option<PathBuf>,
    pub val_captions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub glove: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub min_count: Option<usize>,
    pub max_len: Option<usize>,
    pub d_img: Option<usize>,
    pub d_emb: Option<usize>,
    pub d_h: Option<usize>,
    pub split_embedding: Option<bool>,
    pub lambda_gp: Option<f64>,
    pub p_embedding: Option<f64>,
    pub p_hidden: Option<f64>,
    pub batch_size: Option<usize>,
    pub critic_ratio: Option<usize>,
    pub objective: Option<ObjectiveArg>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub mismatched_pairs: Option<bool>,
    pub penalize_log_loss: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_captions,
            &mut cfg.val_captions,
            &mut cfg.features,
            &mut cfg.vocab,
            &mut cfg.glove,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by `train` and `sweep`. Each overrides the config file.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON run configuration with flat keys; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training captions (COCO annotation JSON)
    #[arg(long)]
    pub train_captions: Option<PathBuf>,
    /// Validation captions (COCO annotation JSON)
    #[arg(long)]
    pub val_captions: Option<PathBuf>,
    /// Image features (CAPF file)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Vocabulary JSON; built from the training captions when absent
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// GloVe text vectors for the (frozen) embedding table
    #[arg(long)]
    pub glove: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Minimum token count for the built vocabulary
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    /// Maximum caption length, `<eos>` included
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Image feature width
    #[arg(long, default_value_t = 2048)]
    pub d_img: usize,
    /// Embedding width
    #[arg(long, default_value_t = 300)]
    pub d_emb: usize,
    /// GRU hidden width
    #[arg(long, default_value_t = 256)]
    pub d_h: usize,
    /// Give the generator its own embedding table
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub split_embedding: bool,
    /// Gradient penalty weight λ
    #[arg(long, default_value_t = 9.0)]
    pub lambda_gp: f64,
    /// Dropout rate on the generator's word embeddings
    #[arg(long, default_value_t = 0.0)]
    pub p_embedding: f64,
    /// Dropout rate on the generator's hidden state
    #[arg(long, default_value_t = 0.5)]
    pub p_hidden: f64,
    /// Captions per minibatch
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// Critic updates per generator update
    #[arg(long, default_value_t = 5)]
    pub critic_ratio: usize,
    /// Adversarial objective
    #[arg(long, value_enum, default_value_t = ObjectiveArg::WganGp)]
    pub objective: ObjectiveArg,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Adam first-moment decay
    #[arg(long, default_value_t = 0.5)]
    pub beta1: f64,
    /// Adam second-moment decay
    #[arg(long, default_value_t = 0.9)]
    pub beta2: f64,
    /// Epochs without validation BLEU improvement before stopping
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Epoch budget
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// Random seed [default: $CAPGAN_SEED, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Add (real caption, wrong image) pairs to the critic's fake term
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub mismatched_pairs: bool,
    /// Apply the gradient penalty under the log-loss objective too
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub penalize_log_loss: bool,
}

fn given(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

/// Seed precedence: flag, then config file, then `CAPGAN_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

impl RunArgs {
    /// Merges flags (from `m`, the subcommand's matches) over the config file.
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        macro_rules! pick {
            ($f:ident) => {
                if given(m, stringify!($f)) {
                    self.$f.clone()
                } else {
                    file.$f.clone().unwrap_or_else(|| self.$f.clone())
                }
            };
        }
        macro_rules! path {
            ($f:ident) => {
                self.$f
                    .clone()
                    .or(file.$f.clone())
                    .with_context(|| format!("missing `{}`: pass --{} or set it in the config", stringify!($f), stringify!($f).replace('_', "-")))?
            };
        }
        let cfg = RunConfig {
            train_captions: path!(train_captions),
            val_captions: path!(val_captions),
            features: path!(features),
            vocab: self.vocab.clone().or(file.vocab.clone()),
            glove: self.glove.clone().or(file.glove.clone()),
            out_dir: pick!(out_dir),
            min_count: pick!(min_count),
            max_len: pick!(max_len),
            d_img: pick!(d_img),
            d_emb: pick!(d_emb),
            d_h: pick!(d_h),
            split_embedding: pick!(split_embedding),
            lambda_gp: pick!(lambda_gp),
            p_embedding: pick!(p_embedding),
            p_hidden: pick!(p_hidden),
            batch_size: pick!(batch_size),
            critic_ratio: pick!(critic_ratio),
            objective: pick!(objective),
            lr: pick!(lr),
            beta1: pick!(beta1),
            beta2: pick!(beta2),
            patience: pick!(patience),
            max_epochs: pick!(max_epochs),
            seed: resolve_seed(self.seed, file.seed)?,
            mismatched_pairs: pick!(mismatched_pairs),
            penalize_log_loss: pick!(penalize_log_loss),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, path) in [
            ("train_captions", Some(&self.train_captions)),
            ("val_captions", Some(&self.val_captions)),
            ("features", Some(&self.features)),
            ("vocab", self.vocab.as_ref()),
            ("glove", self.glove.as_ref()),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{key}: file {} does not exist", p.display());
                }
            }
        }
        if self.d_img == 0 || self.d_emb == 0 || self.d_h == 0 {
            bail!("d_img, d_emb and d_h must be positive");
        }
        if self.max_epochs == 0 {
            bail!("max_epochs must be at least 1");
        }
        self.model_config(0).validate()?;
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab_size.max(3),
            d_img: self.d_img,
            d_emb: self.d_emb,
            d_h: self.d_h,
            split_embedding: self.split_embedding,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lambda_gp: self.lambda_gp,
            dropout: DropoutSpec::new(self.p_embedding, self.p_hidden)?,
            batch_size: self.batch_size,
            critic_ratio: self.critic_ratio,
            objective: self.objective.into(),
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                ..AdamConfig::default()
            },
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
            mismatched_pairs: self.mismatched_pairs,
            penalize_log_loss: self.penalize_log_loss,
            max_len: self.max_len,
            target_metric: None,
        })
    }
}
