use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CaptionRecord;
use crate::error::{Error, Result};
use crate::model::{DecodeConfig, Model};
use crate::nn::DropoutSpec;
use crate::par::Exec;
use crate::training::{train_loop, BleuValidator, EpochRecord, TrainConfig, TrainData};

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub rates_emb: Vec<f64>,
    pub rates_hid: Vec<f64>,
    pub budget_epochs: usize,
    /// Worker threads for cells; 0 lets the pool decide.
    pub jobs: usize,
    pub exec: Exec,
    /// Per-cell histories and checkpoints go to `run_dir/cell_e{p}_h{p}`.
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub p_embedding: f64,
    pub p_hidden: f64,
    /// Validation BLEU-4 of the checkpoint the run kept; 0 for failed cells.
    pub val_bleu4: f64,
    pub epochs_run: usize,
    pub failed: bool,
    pub error: Option<String>,
    pub history: Vec<EpochRecord>,
}

/// Rows follow the hidden rates, columns the embedding rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub embedding_rates: Vec<f64>,
    pub hidden_rates: Vec<f64>,
    pub cells: Vec<Vec<SweepCell>>,
}

impl SweepGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p_hidden\\p_emb");
        for r in &self.embedding_rates {
            write!(out, ",{r:.6}").unwrap();
        }
        out.push('\n');
        for (h, row) in self.hidden_rates.iter().zip(&self.cells) {
            write!(out, "{h:.6}").unwrap();
            for cell in row {
                write!(out, ",{:.6}", cell.val_bleu4).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn cell_dir(root: &Path, pe: f64, ph: f64) -> PathBuf {
    root.join(format!("cell_e{pe}_h{ph}"))
}

/// Trains one model per (embedding rate, hidden rate) pair from the same
/// initial parameters and seed. A cell that fails numerically is recorded
/// with BLEU 0 and `failed` set; other errors abort the sweep.
pub fn dropout_sweep(
    base: &TrainConfig,
    initial: &Model,
    data: TrainData<'_>,
    val: &[CaptionRecord],
    opts: &SweepOptions,
) -> Result<SweepGrid> {
    if opts.rates_emb.is_empty() || opts.rates_hid.is_empty() {
        return Err(Error::contract("sweep: rate lists must be non-empty"));
    }
    for &p in opts.rates_emb.iter().chain(&opts.rates_hid) {
        DropoutSpec::new(p, p)?;
    }
    let pairs: Vec<(f64, f64)> = opts
        .rates_hid
        .iter()
        .flat_map(|&h| opts.rates_emb.iter().map(move |&e| (e, h)))
        .collect();
    let run_cell = |&(pe, ph): &(f64, f64)| -> Result<SweepCell> {
        let cfg = TrainConfig {
            dropout: DropoutSpec::new(pe, ph)?,
            max_epochs: opts.budget_epochs,
            ..base.clone()
        };
        let mut validator = BleuValidator {
            records: val,
            features: data.features,
            vocab: data.vocab,
            decode: DecodeConfig {
                max_len: cfg.max_len,
                ..DecodeConfig::default()
            },
            exec: Exec::Sequential,
        };
        let dir = opts.run_dir.as_ref().map(|root| cell_dir(root, pe, ph));
        match train_loop(&cfg, data, initial.clone(), &mut validator, dir.as_deref()) {
            Ok(out) => Ok(SweepCell {
                p_embedding: pe,
                p_hidden: ph,
                val_bleu4: if out.best_metric.is_finite() { out.best_metric } else { 0.0 },
                epochs_run: out.history.len(),
                failed: false,
                error: None,
                history: out.history,
            }),
            Err(e) if e.is_numerical() => {
                log::warn!("sweep cell (p_emb {pe}, p_hidden {ph}) failed: {e}");
                Ok(SweepCell {
                    p_embedding: pe,
                    p_hidden: ph,
                    val_bleu4: 0.0,
                    epochs_run: 0,
                    failed: true,
                    error: Some(e.to_string()),
                    history: Vec::new(),
                })
            }
            Err(e) => Err(e),
        }
    };
    let results = opts.exec.with_jobs(opts.jobs, || opts.exec.map_slice(&pairs, run_cell));
    let mut cells = Vec::with_capacity(opts.rates_hid.len());
    let mut it = results.into_iter();
    for _ in &opts.rates_hid {
        let row = it.by_ref().take(opts.rates_emb.len()).collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(SweepGrid {
        embedding_rates: opts.rates_emb.clone(),
        hidden_rates: opts.rates_hid.clone(),
        cells,
    })
}
