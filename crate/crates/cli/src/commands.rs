use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::ArgMatches;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use capgan_core::data::{generate_synthetic, load_captions, CaptionRecord, CocoCaptions, FeatureTable, SyntheticSpec, Vocabulary};
use capgan_core::eval::{dropout_sweep, evaluate as eval_model, Evaluation, SweepOptions};
use capgan_core::model::{load_checkpoint, save_checkpoint, Checkpoint, DecodeConfig, Model};
use capgan_core::nn::load_glove;
use capgan_core::training::{train_loop, BleuValidator, EpochRecord, TrainData};

use crate::config::{resolve_seed, FileConfig, ObjectiveArg, RunConfig};
use crate::{EvaluateArgs, GenerateArgs, MakeSynthArgs, SweepArgs, TrainArgs};

fn load_features(path: &Path) -> Result<FeatureTable> {
    ensure!(path.exists(), "feature file {} does not exist", path.display());
    FeatureTable::load(path).with_context(|| format!("cannot load features from {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read vocabulary {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid vocabulary {}", path.display()))
}

fn load_model(dir: &Path, vocab: Option<&Path>) -> Result<(Model, Vocabulary)> {
    let Checkpoint { model, vocab: saved } =
        load_checkpoint(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))?;
    let vocab = match (vocab, saved) {
        (Some(p), _) => load_vocab(p)?,
        (None, Some(v)) => v,
        (None, None) => bail!("checkpoint {} has no vocabulary; pass --vocab", dir.display()),
    };
    ensure!(
        vocab.len() == model.config.vocab_size,
        "vocabulary has {} tokens, the checkpoint expects {}",
        vocab.len(),
        model.config.vocab_size
    );
    Ok((model, vocab))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Everything a run reads, loaded and checked against the config.
struct Inputs {
    features: FeatureTable,
    vocab: Vocabulary,
    train: Vec<CaptionRecord>,
    val: Vec<CaptionRecord>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let features = load_features(&cfg.features)?;
    ensure!(
        features.d_img() == cfg.d_img,
        "features in {} have width {}, but d_img is {}",
        cfg.features.display(),
        features.d_img(),
        cfg.d_img
    );
    let vocab = match &cfg.vocab {
        Some(p) => load_vocab(p)?,
        None => {
            let coco = CocoCaptions::load(&cfg.train_captions)?;
            let corpus: Vec<Vec<String>> = coco.grouped().into_iter().flat_map(|g| g.captions).collect();
            Vocabulary::build(&corpus, cfg.min_count)?
        }
    };
    let train = load_captions(&cfg.train_captions, &vocab, &features, cfg.max_len)?.records;
    let val = load_captions(&cfg.val_captions, &vocab, &features, cfg.max_len)?.records;
    ensure!(!train.is_empty(), "no usable training images in {}", cfg.train_captions.display());
    ensure!(!val.is_empty(), "no usable validation images in {}", cfg.val_captions.display());
    Ok(Inputs {
        features,
        vocab,
        train,
        val,
    })
}

fn initial_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mcfg = cfg.model_config(vocab.len());
    let model = match &cfg.glove {
        Some(path) => {
            let (table, found) = load_glove(path, vocab.tokens(), cfg.d_emb, &mut rng)
                .with_context(|| format!("cannot load GloVe vectors from {}", path.display()))?;
            log::info!("glove: {found} of {} tokens found", vocab.len());
            Model::with_embedding(mcfg, table, &mut rng)?
        }
        None => Model::new(mcfg, &mut rng)?,
    };
    Ok(model)
}

#[derive(Serialize)]
struct History<'a> {
    objective: ObjectiveArg,
    seed: u64,
    config: &'a RunConfig,
    best_epoch: usize,
    best_val_bleu4: f64,
    stopped_early: bool,
    epochs: &'a [EpochRecord],
}

pub fn train(args: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let cfg = args.run.resolve(m)?;
    let tcfg = cfg.train_config()?;
    let inputs = load_inputs(&cfg)?;
    let model = initial_model(&cfg, &inputs.vocab)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg)?;

    let decode = DecodeConfig {
        max_len: cfg.max_len,
        ..DecodeConfig::default()
    };
    let mut validator = BleuValidator {
        records: &inputs.val,
        features: &inputs.features,
        vocab: &inputs.vocab,
        decode: decode.clone(),
        exec: args.exec.into(),
    };
    let data = TrainData {
        train: &inputs.train,
        features: &inputs.features,
        vocab: &inputs.vocab,
    };
    let outcome = train_loop(&tcfg, data, model, &mut validator, Some(out))?;
    save_checkpoint(&out.join("best"), &outcome.best_model, Some(&inputs.vocab))?;
    write_json(
        &out.join("history.json"),
        &History {
            objective: cfg.objective,
            seed: cfg.seed,
            config: &cfg,
            best_epoch: outcome.best_epoch,
            best_val_bleu4: outcome.best_metric,
            stopped_early: outcome.stopped_early,
            epochs: &outcome.history,
        },
    )?;

    let eval = eval_model(
        &outcome.best_model,
        &inputs.val,
        &inputs.features,
        &inputs.vocab,
        &decode,
        args.exec.into(),
    )?;
    write_json(&out.join("eval.json"), &eval.report)?;
    eval.write_jsonl(&out.join("eval_images.jsonl"))?;
    println!(
        "best epoch {} val BLEU-4 {:.4}; outputs in {}",
        outcome.best_epoch,
        eval.report.bleu4,
        out.display()
    );
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    ensure!(args.max_len > 0, "--max-len must be at least 1");
    let (model, vocab) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    let features = load_features(&args.features)?;
    ensure!(
        features.d_img() == model.config.d_img,
        "features have width {}, the checkpoint expects {}",
        features.d_img(),
        model.config.d_img
    );
    let Some(row) = features.row_of(args.image_id) else {
        bail!("image id {} is not in {}", args.image_id, args.features.display());
    };
    let ids = model.decode_greedy(&features.gather(&[row]), args.max_len)?;
    println!("{}", vocab.detokenize(&ids[0]));
    Ok(())
}

/// The scoring behind `evaluate`, without the printing.
pub fn evaluate_files(args: &EvaluateArgs) -> Result<Evaluation> {
    ensure!(args.max_len > 0, "--max-len must be at least 1");
    let (model, vocab) = load_model(&args.checkpoint, args.vocab.as_deref())?;
    let features = load_features(&args.features)?;
    ensure!(
        features.d_img() == model.config.d_img,
        "features have width {}, the checkpoint expects {}",
        features.d_img(),
        model.config.d_img
    );
    let records = load_captions(&args.captions, &vocab, &features, args.max_len)?.records;
    ensure!(!records.is_empty(), "no images to evaluate in {}", args.captions.display());
    let decode = DecodeConfig {
        max_len: args.max_len,
        ..DecodeConfig::default()
    };
    Ok(eval_model(&model, &records, &features, &vocab, &decode, args.exec.into())?)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let eval = evaluate_files(args)?;
    eval.write_jsonl(&args.per_image)
        .with_context(|| format!("cannot write {}", args.per_image.display()))?;
    println!("{}", serde_json::to_string_pretty(&eval.report)?);
    Ok(())
}

pub fn sweep(args: &SweepArgs, m: &ArgMatches) -> Result<()> {
    for &p in args.rates_emb.iter().chain(&args.rates_hid) {
        ensure!((0.0..1.0).contains(&p), "dropout rate {p} is outside [0, 1)");
    }
    ensure!(args.budget_epochs > 0, "--budget-epochs must be at least 1");
    let cfg = args.run.resolve(m)?;
    let tcfg = cfg.train_config()?;
    let inputs = load_inputs(&cfg)?;
    let model = initial_model(&cfg, &inputs.vocab)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg)?;
    let opts = SweepOptions {
        rates_emb: args.rates_emb.clone(),
        rates_hid: args.rates_hid.clone(),
        budget_epochs: args.budget_epochs,
        jobs: args.jobs,
        exec: args.exec.into(),
        run_dir: Some(out.clone()),
    };
    let data = TrainData {
        train: &inputs.train,
        features: &inputs.features,
        vocab: &inputs.vocab,
    };
    let grid = dropout_sweep(&tcfg, &model, data, &inputs.val, &opts)?;
    let csv = out.join("sweep.csv");
    grid.write_csv(&csv)?;
    write_json(&out.join("sweep.json"), &grid)?;
    for cell in grid.cells.iter().flatten().filter(|c| c.failed) {
        log::warn!(
            "cell p_emb {} p_hidden {} failed: {}",
            cell.p_embedding,
            cell.p_hidden,
            cell.error.as_deref().unwrap_or("")
        );
    }
    println!("{}", csv.display());
    Ok(())
}

/// The config `make-synth` writes next to the data: small dimensions and
/// the faster optimizer settings that suit the synthetic task.
fn synth_config(spec: &SyntheticSpec, seed: u64) -> FileConfig {
    FileConfig {
        train_captions: Some(PathBuf::from("train.json")),
        val_captions: Some(PathBuf::from("val.json")),
        features: Some(PathBuf::from("features.capf")),
        vocab: Some(PathBuf::from("vocab.json")),
        out_dir: Some(PathBuf::from("run")),
        min_count: Some(1),
        d_img: Some(spec.d_img),
        d_emb: Some(32),
        d_h: Some(64),
        batch_size: Some(64),
        lr: Some(1e-3),
        patience: Some(20),
        seed: Some(seed),
        ..FileConfig::default()
    }
}

pub fn make_synth(args: &MakeSynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read synthetic spec {}", p.display()))?;
            serde_json::from_str::<SyntheticSpec>(&text).with_context(|| format!("invalid synthetic spec {}", p.display()))?
        }
        None => SyntheticSpec {
            seed: resolve_seed(None, None)?,
            ..SyntheticSpec::default()
        },
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    data.write(&args.out)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    // only the keys that differ from the defaults
    let mut config = serde_json::to_value(synth_config(&spec, spec.seed))?;
    if let Some(map) = config.as_object_mut() {
        map.retain(|_, v| !v.is_null());
    }
    write_json(&args.out.join("config.json"), &config)?;
    println!("{}", args.out.join("config.json").display());
    Ok(())
}
