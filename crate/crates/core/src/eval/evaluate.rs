use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu_with, sentence_bleu, BleuReport, Smoothing};
use crate::data::{tokenize, CaptionRecord, FeatureTable, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{DecodeConfig, Model};
use crate::par::Exec;

/// Images decoded together; fixed so results never depend on the exec mode.
const DECODE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub image_id: u64,
    pub candidate: String,
    pub references: Vec<String>,
    pub sentence_bleu4: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: BleuReport,
    pub images: Vec<ImageEval>,
}

impl Evaluation {
    /// One JSON object per image.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for img in &self.images {
            writeln!(out, "{}", serde_json::to_string(img)?)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Greedy captions (dropout off) for `records`, scored against all of
/// their references.
pub fn decode_records(
    model: &Model,
    records: &[CaptionRecord],
    features: &FeatureTable,
    cfg: &DecodeConfig,
    exec: Exec,
) -> Result<Vec<Vec<usize>>> {
    let chunks: Vec<&[CaptionRecord]> = records.chunks(DECODE_CHUNK).collect();
    let decoded = exec.map_slice(&chunks, |chunk| {
        let rows: Vec<usize> = chunk.iter().map(|r| r.feature_row).collect();
        model.decode_greedy(&features.gather(&rows), cfg.max_len)
    });
    let mut out = Vec::with_capacity(records.len());
    for chunk in decoded {
        out.extend(chunk?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    records: &[CaptionRecord],
    features: &FeatureTable,
    vocab: &Vocabulary,
    cfg: &DecodeConfig,
    exec: Exec,
) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::contract("evaluate: empty dataset"));
    }
    let decoded = decode_records(model, records, features, cfg, exec)?;
    let candidates: Vec<Vec<String>> = decoded.iter().map(|ids| tokenize(&vocab.detokenize(ids))).collect();
    let references: Vec<Vec<Vec<String>>> = records.iter().map(|r| r.reference_tokens.clone()).collect();
    let report = corpus_bleu_with(exec, &candidates, &references, Smoothing::None)?;
    let images = records
        .iter()
        .zip(&candidates)
        .zip(&references)
        .map(|((rec, cand), refs)| {
            Ok(ImageEval {
                image_id: rec.image_id,
                candidate: cand.join(" "),
                references: refs.iter().map(|r| r.join(" ")).collect(),
                sentence_bleu4: sentence_bleu(cand, refs, Smoothing::None)?.bleu4,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { report, images })
}
