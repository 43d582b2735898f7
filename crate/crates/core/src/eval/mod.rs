//! BLEU scoring, validation-set evaluation and the dropout sweep.

mod bleu;
mod evaluate;
mod sweep;

pub use bleu::{corpus_bleu, corpus_bleu_with, ngram_precision, sentence_bleu, BleuReport, Smoothing};
pub use evaluate::{decode_records, evaluate, Evaluation, ImageEval};
pub use sweep::{dropout_sweep, SweepCell, SweepGrid, SweepOptions};
