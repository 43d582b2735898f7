//! Modified n-gram precision and BLEU-4 with per-reference clipping.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds `k` to the matches and the totals of every order.
    AddK(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// On the 0–1 scale.
    pub bleu4: f64,
    pub precisions: [f64; 4],
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram count of one sentence.
fn sentence_ngrams<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in references {
        for (gram, c) in ngram_counts(r, n) {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(c);
        }
    }
    let matches = cand
        .iter()
        .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Corpus-wide clipped n-gram matches and candidate n-gram total.
pub fn ngram_precision<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], n: usize) -> Result<(usize, usize)> {
    if n < 1 {
        return Err(Error::contract("ngram_precision: n must be at least 1"));
    }
    check_corpus(candidates, references)?;
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| sentence_ngrams(c, r, n))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1)))
}

fn check_corpus<T>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::contract("bleu: empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "bleu: {} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::contract("bleu: every candidate needs a reference"));
    }
    Ok(())
}

#[derive(Clone, Copy, Default)]
struct Stats {
    matches: [usize; 4],
    totals: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

fn sentence_stats<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>]) -> Stats {
    let mut s = Stats {
        cand_len: candidate.len(),
        ..Stats::default()
    };
    for n in 1..=4 {
        let (m, t) = sentence_ngrams(candidate, references, n);
        s.matches[n - 1] = m;
        s.totals[n - 1] = t;
    }
    // closest reference length, shorter one on ties
    s.ref_len = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(candidate.len()), r))
        .unwrap_or(0);
    s
}

fn report(s: Stats, smoothing: Smoothing) -> BleuReport {
    let k = match smoothing {
        Smoothing::None => 0.0,
        Smoothing::AddK(k) => k,
    };
    let precisions: [f64; 4] = std::array::from_fn(|i| {
        let (m, t) = (s.matches[i] as f64 + k, s.totals[i] as f64 + k);
        if t == 0.0 {
            0.0
        } else {
            m / t
        }
    });
    let brevity_penalty = if s.cand_len == 0 {
        0.0
    } else {
        (1.0 - s.ref_len as f64 / s.cand_len as f64).exp().min(1.0)
    };
    let bleu4 = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    BleuReport {
        bleu4,
        precisions,
        matches: s.matches,
        totals: s.totals,
        brevity_penalty,
        candidate_length: s.cand_len,
        reference_length: s.ref_len,
    }
}

/// Corpus BLEU-4: counts are summed over the corpus, then combined.
pub fn corpus_bleu<T: Eq + Hash + Sync>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    smoothing: Smoothing,
) -> Result<BleuReport> {
    corpus_bleu_with(Exec::default(), candidates, references, smoothing)
}

pub fn corpus_bleu_with<T: Eq + Hash + Sync>(
    exec: Exec,
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    smoothing: Smoothing,
) -> Result<BleuReport> {
    check_corpus(candidates, references)?;
    let per = exec.map_range(candidates.len(), |i| sentence_stats(&candidates[i], &references[i]));
    let total = per.into_iter().fold(Stats::default(), |mut a, s| {
        for n in 0..4 {
            a.matches[n] += s.matches[n];
            a.totals[n] += s.totals[n];
        }
        a.cand_len += s.cand_len;
        a.ref_len += s.ref_len;
        a
    });
    Ok(report(total, smoothing))
}

pub fn sentence_bleu<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], smoothing: Smoothing) -> Result<BleuReport> {
    if references.is_empty() {
        return Err(Error::contract("bleu: every candidate needs a reference"));
    }
    Ok(report(sentence_stats(candidate, references), smoothing))
}
