use rand::seq::SliceRandom;
use rand::Rng;

use super::captions::CaptionRecord;
use super::features::FeatureTable;
use super::vocab::{BOS, PAD};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A padded minibatch of (image, caption) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch, d_img]` image features.
    pub image: Tensor,
    /// Target ids per item, `<pad>`-filled to a common length.
    pub targets: Vec<Vec<usize>>,
    /// `[batch, steps]`, 1 where the target is a real token.
    pub mask: Tensor,
    pub image_ids: Vec<u64>,
    pub vocab_size: usize,
}

impl Batch {
    /// Pads `sequences` to their maximum length. Ids must be below `vocab_size`.
    pub fn new(image: Tensor, sequences: Vec<Vec<usize>>, image_ids: Vec<u64>, vocab_size: usize) -> Result<Self> {
        if image.ndim() != 2 || image.rows() != sequences.len() || image_ids.len() != sequences.len() {
            return Err(Error::contract(format!(
                "batch: {} sequences, {} ids for images of shape {:?}",
                sequences.len(),
                image_ids.len(),
                image.shape()
            )));
        }
        if sequences.iter().flatten().any(|&id| id >= vocab_size) {
            return Err(Error::contract("batch: token id outside the vocabulary"));
        }
        let steps = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::contract("batch: every sequence is empty"));
        }
        let mut mask = vec![0.0; sequences.len() * steps];
        let targets = sequences
            .into_iter()
            .enumerate()
            .map(|(b, mut seq)| {
                mask[b * steps..b * steps + seq.len()].fill(1.0);
                seq.resize(steps, PAD);
                seq
            })
            .collect();
        Ok(Batch {
            mask: Tensor::matrix(image.rows(), steps, mask),
            image,
            targets,
            image_ids,
            vocab_size,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.mask.cols()
    }

    /// Target ids at step `t`.
    pub fn step_ids(&self, t: usize) -> Vec<usize> {
        self.targets.iter().map(|s| s[t]).collect()
    }

    /// Teacher-forced generator inputs at step `t`: `<bos>`, then the previous target.
    pub fn input_ids(&self, t: usize) -> Vec<usize> {
        if t == 0 {
            vec![BOS; self.len()]
        } else {
            self.step_ids(t - 1)
        }
    }

    /// `[batch]` mask column for step `t`.
    pub fn step_mask(&self, t: usize) -> Tensor {
        Tensor::vector((0..self.len()).map(|b| self.mask.at(b, t)).collect())
    }

    /// Number of real tokens per item.
    pub fn lengths(&self) -> Vec<f64> {
        (0..self.len()).map(|b| self.mask.row(b).iter().sum()).collect()
    }

    /// The targets as one-hot `[batch, vocab]` rows, one tensor per step.
    pub fn real_dists(&self) -> Vec<Tensor> {
        (0..self.steps()).map(|t| one_hot(&self.step_ids(t), self.vocab_size)).collect()
    }
}

pub fn one_hot(ids: &[usize], vocab_size: usize) -> Tensor {
    let mut data = vec![0.0; ids.len() * vocab_size];
    for (r, &id) in ids.iter().enumerate() {
        data[r * vocab_size + id] = 1.0;
    }
    Tensor::matrix(ids.len(), vocab_size, data)
}

/// One epoch of shuffled minibatches; each image contributes one randomly
/// chosen reference.
pub struct BatchIter<'a> {
    records: &'a [CaptionRecord],
    features: &'a FeatureTable,
    order: Vec<(usize, usize)>,
    batch_size: usize,
    vocab_size: usize,
    pos: usize,
}

pub fn batch_iter<'a>(
    records: &'a [CaptionRecord],
    features: &'a FeatureTable,
    batch_size: usize,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_iter: batch size must be at least 1"));
    }
    let mut order: Vec<(usize, usize)> = (0..records.len())
        .map(|i| (i, rng.random_range(0..records[i].references.len().max(1))))
        .collect();
    order.shuffle(rng);
    Ok(BatchIter {
        records,
        features,
        order,
        batch_size,
        vocab_size,
        pos: 0,
    })
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;
        let rows: Vec<usize> = chunk.iter().map(|&(i, _)| self.records[i].feature_row).collect();
        let seqs = chunk
            .iter()
            .map(|&(i, r)| self.records[i].references[r].clone())
            .collect();
        let ids = chunk.iter().map(|&(i, _)| self.records[i].image_id).collect();
        Some(
            Batch::new(self.features.gather(&rows), seqs, ids, self.vocab_size)
                .expect("records hold valid references"),
        )
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}
