//! The dual-branch captioning model: a generator that emits per-step
//! vocabulary distributions and a critic that scores (caption, image) pairs.

mod checkpoint;
mod discriminator;
mod generator;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, ManifestEntry};
pub use discriminator::{BoundDiscriminator, CriticInput};
pub use generator::{BoundGenerator, DecodeConfig, DecodeStrategy, Rollout, StepState};

use crate::error::{Error, Result};
use crate::nn::init::xavier_uniform;
use crate::nn::{AttentionParams, Binder, EmbeddingTable, GruCellParams, Params};
use crate::tensor::Tensor;

/// Sizes and embedding options of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_img: usize,
    pub d_emb: usize,
    pub d_h: usize,
    /// Give the generator its own embedding table instead of sharing the critic's.
    #[serde(default)]
    pub split_embedding: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        // <pad>, <bos> and <eos> must have ids
        if self.vocab_size < 3 || [self.d_img, self.d_emb, self.d_h].contains(&0) {
            return Err(Error::contract(format!(
                "model config: sizes must be positive and the vocabulary must hold <pad>, <bos>, <eos> ({self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    /// Present only when the embedding is split from the critic's.
    pub embedding: Option<EmbeddingTable>,
    pub gru1: GruCellParams,
    pub gru2: GruCellParams,
    pub att: AttentionParams,
    /// `[d_h, |V|]`
    pub w_proj: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub gru1: GruCellParams,
    pub gru2: GruCellParams,
    pub att: AttentionParams,
    /// `[d_h, 1]`
    pub w_ans: Tensor,
}

impl Params for GeneratorParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(e) = &self.embedding {
            e.visit(&join(prefix, "embedding"), f);
        }
        self.gru1.visit(&join(prefix, "gru1"), f);
        self.gru2.visit(&join(prefix, "gru2"), f);
        self.att.visit(&join(prefix, "att"), f);
        f(join(prefix, "w_proj"), &self.w_proj);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(e) = &mut self.embedding {
            e.visit_mut(&join(prefix, "embedding"), f);
        }
        self.gru1.visit_mut(&join(prefix, "gru1"), f);
        self.gru2.visit_mut(&join(prefix, "gru2"), f);
        self.att.visit_mut(&join(prefix, "att"), f);
        f(join(prefix, "w_proj"), &mut self.w_proj);
    }
}

impl Params for DiscriminatorParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.gru1.visit(&join(prefix, "gru1"), f);
        self.gru2.visit(&join(prefix, "gru2"), f);
        self.att.visit(&join(prefix, "att"), f);
        f(join(prefix, "w_ans"), &self.w_ans);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.gru1.visit_mut(&join(prefix, "gru1"), f);
        self.gru2.visit_mut(&join(prefix, "gru2"), f);
        self.att.visit_mut(&join(prefix, "att"), f);
        f(join(prefix, "w_ans"), &mut self.w_ans);
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Which side of the game a parameter update belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

/// Both branches plus the shared embedding table.
///
/// The shared table belongs to the critic: critic updates train it (unless
/// frozen) and the generator reads it as a constant. With
/// `split_embedding` the generator owns a second table.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let scale = 1.0 / (config.d_emb as f64).sqrt();
        let embedding = EmbeddingTable::random(config.vocab_size, config.d_emb, scale, rng);
        Self::with_embedding(config, embedding, rng)
    }

    /// Builds a model around a prepared (for instance GloVe) table.
    pub fn with_embedding(config: ModelConfig, embedding: EmbeddingTable, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if embedding.vocab_size() != config.vocab_size || embedding.dim() != config.d_emb {
            return Err(Error::Shape {
                op: "model embedding",
                lhs: embedding.matrix.shape().to_vec(),
                rhs: vec![config.vocab_size, config.d_emb],
            });
        }
        let ModelConfig { vocab_size: v, d_img, d_emb, d_h, .. } = config;
        let generator = GeneratorParams {
            embedding: config.split_embedding.then(|| embedding.clone()),
            gru1: GruCellParams::new(d_emb, d_h, rng),
            gru2: GruCellParams::new(d_h, d_h, rng),
            att: AttentionParams::new(d_img, d_h, rng),
            w_proj: xavier_uniform(d_h, v, rng),
        };
        let discriminator = DiscriminatorParams {
            gru1: GruCellParams::new(d_emb, d_h, rng),
            gru2: GruCellParams::new(d_h, d_h, rng),
            att: AttentionParams::new(d_img, d_h, rng),
            w_ans: xavier_uniform(d_h, 1, rng),
        };
        Ok(Model {
            config,
            embedding,
            generator,
            discriminator,
        })
    }

    /// A model with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ModelConfig { vocab_size: v, d_img, d_emb, d_h, .. } = config;
        let table = EmbeddingTable {
            matrix: Tensor::zeros(&[v, d_emb]),
            frozen: false,
        };
        let zeros_att = AttentionParams {
            w_i: Tensor::zeros(&[d_img, d_h]),
        };
        Ok(Model {
            generator: GeneratorParams {
                embedding: config.split_embedding.then(|| table.clone()),
                gru1: GruCellParams::zeros(d_emb, d_h),
                gru2: GruCellParams::zeros(d_h, d_h),
                att: zeros_att.clone(),
                w_proj: Tensor::zeros(&[d_h, v]),
            },
            discriminator: DiscriminatorParams {
                gru1: GruCellParams::zeros(d_emb, d_h),
                gru2: GruCellParams::zeros(d_h, d_h),
                att: zeros_att,
                w_ans: Tensor::zeros(&[d_h, 1]),
            },
            embedding: table,
            config,
        })
    }

    /// Places the generator on `binder`'s tape. Its parameters become leaves
    /// when `trainable`; the shared table is always a constant here.
    pub fn bind_generator<'t>(&self, binder: &mut Binder<'t>, trainable: bool) -> BoundGenerator<'t> {
        binder.set_trainable(trainable);
        let g = &self.generator;
        let emb = match &g.embedding {
            Some(own) => {
                binder.set_trainable(trainable && !own.frozen);
                let v = binder.bind("generator.embedding.matrix".into(), &own.matrix);
                binder.set_trainable(trainable);
                v
            }
            None => binder.tape().constant(self.embedding.matrix.clone()),
        };
        BoundGenerator {
            emb,
            gru1: g.gru1.bind(binder, "generator.gru1"),
            gru2: g.gru2.bind(binder, "generator.gru2"),
            att: g.att.bind(binder, "generator.att"),
            w_proj: binder.bind("generator.w_proj".into(), &g.w_proj),
            vocab_size: self.config.vocab_size,
        }
    }

    /// Places the critic and the shared table on `binder`'s tape.
    pub fn bind_discriminator<'t>(&self, binder: &mut Binder<'t>, trainable: bool) -> BoundDiscriminator<'t> {
        binder.set_trainable(trainable && !self.embedding.frozen);
        let emb = binder.bind("embedding.matrix".into(), &self.embedding.matrix);
        binder.set_trainable(trainable);
        let d = &self.discriminator;
        BoundDiscriminator {
            emb,
            gru1: d.gru1.bind(binder, "discriminator.gru1"),
            gru2: d.gru2.bind(binder, "discriminator.gru2"),
            att: d.att.bind(binder, "discriminator.att"),
            w_ans: binder.bind("discriminator.w_ans".into(), &d.w_ans),
        }
    }

    /// A copy of the named parameter.
    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.named("")
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
    }

    /// Replaces the named parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let mut result = Err(Error::contract(format!("no parameter named {name}")));
        self.visit_mut("", &mut |n, t| {
            if n == name {
                result = if t.shape() == value.shape() {
                    *t = value.clone();
                    Ok(())
                } else {
                    Err(Error::Shape {
                        op: "set_param",
                        lhs: t.shape().to_vec(),
                        rhs: value.shape().to_vec(),
                    })
                };
            }
        });
        result
    }

    /// Mutable access to every tensor updated by `side`, keyed like the
    /// names produced by the binders.
    pub fn visit_side_mut(&mut self, side: Side, f: &mut dyn FnMut(String, &mut Tensor)) {
        match side {
            Side::Generator => self.generator.visit_mut("generator", f),
            Side::Discriminator => {
                self.embedding.visit_mut("embedding", f);
                self.discriminator.visit_mut("discriminator", f);
            }
        }
    }
}

impl Params for Model {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.generator.visit(&join(prefix, "generator"), f);
        self.discriminator.visit(&join(prefix, "discriminator"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        self.generator.visit_mut(&join(prefix, "generator"), f);
        self.discriminator.visit_mut(&join(prefix, "discriminator"), f);
    }
}
