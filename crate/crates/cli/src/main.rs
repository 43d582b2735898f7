mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use capgan_core::Exec;
use config::RunArgs;

#[derive(Parser, Debug)]
#[command(name = "capgan", version, about = "Adversarial image captioning: train, generate, evaluate, sweep")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Exec {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes history, the best checkpoint and a validation report to --out-dir
    Train(TrainArgs),
    /// Print the greedy caption of one image
    Generate(GenerateArgs),
    /// Score a checkpoint with corpus BLEU; prints the report as JSON
    Evaluate(EvaluateArgs),
    /// Train one model per (embedding rate, hidden rate) pair; prints the CSV path
    Sweep(SweepArgs),
    /// Write a synthetic dataset and a matching run config
    MakeSynth(MakeSynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Data parallelism for validation decoding and scoring
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image features (CAPF file)
    #[arg(long)]
    pub features: PathBuf,
    /// Image to caption, as listed in the feature file
    #[arg(long)]
    pub image_id: u64,
    /// Maximum caption length, `<eos>` included
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Vocabulary JSON, for checkpoints saved without one
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Captions to score against (COCO annotation JSON)
    #[arg(long)]
    pub captions: PathBuf,
    /// Image features (CAPF file)
    #[arg(long)]
    pub features: PathBuf,
    /// Maximum caption length, `<eos>` included
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Vocabulary JSON, for checkpoints saved without one
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Per-image results, one JSON object per line
    #[arg(long, default_value = "eval_images.jsonl")]
    pub per_image: PathBuf,
    /// Data parallelism for decoding and scoring
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Embedding dropout rates, comma separated, each in [0, 1)
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
    pub rates_emb: Vec<f64>,
    /// Hidden-state dropout rates, comma separated, each in [0, 1)
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
    pub rates_hid: Vec<f64>,
    /// Epochs per cell
    #[arg(long, default_value_t = 20)]
    pub budget_epochs: usize,
    /// Cells trained at once
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Data parallelism for validation decoding and scoring
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
}

#[derive(Args, Debug)]
pub struct MakeSynthArgs {
    /// SyntheticSpec JSON; the built-in spec when absent
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
    /// Overrides the dataset seed [default: the SyntheticSpec seed, else $CAPGAN_SEED, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit codes: 0 ok, 1 usage or validation, 2 numerical abort.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<capgan_core::Error>().is_some_and(|c| c.is_numerical()));
    if numerical {
        2
    } else {
        1
    }
}

fn run(cmd: Command, matches: &ArgMatches) -> anyhow::Result<()> {
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match cmd {
        Command::Train(a) => commands::train(&a, sub),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Sweep(a) => commands::sweep(&a, sub),
        Command::MakeSynth(a) => commands::make_synth(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
