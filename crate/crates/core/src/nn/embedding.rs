use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{join, Params};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on row sums accepted by [`embed_distribution`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

/// Token embedding matrix, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub frozen: bool,
}

impl EmbeddingTable {
    /// Gaussian rows with standard deviation `scale`.
    pub fn random(vocab_size: usize, dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        let data = (0..vocab_size * dim).map(|_| normal.sample(rng)).collect();
        EmbeddingTable {
            matrix: Tensor::matrix(vocab_size, dim, data),
            frozen: false,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

impl Params for EmbeddingTable {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "matrix"), &self.matrix);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "matrix"), &mut self.matrix);
    }
}

/// Row lookup: row `t` of the result is `table[ids[t]]`.
pub fn embed_tokens<'t>(table: Var<'t>, ids: &[usize]) -> Result<Var<'t>> {
    let rows = table.shape()[0];
    if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
        return Err(Error::contract(format!(
            "embed_tokens: token id {bad} out of range for vocabulary of {rows}"
        )));
    }
    Ok(table.gather_rows(ids))
}

/// Mixes embedding rows by a probability distribution per row: `p · E`.
///
/// One-hot rows reproduce [`embed_tokens`] exactly; softmax rows give the
/// expected embedding under the generator's distribution.
pub fn embed_distribution<'t>(table: Var<'t>, dists: Var<'t>) -> Result<Var<'t>> {
    let p = dists.value();
    let e = table.shape();
    if p.ndim() != 2 || p.cols() != e[0] {
        return Err(Error::Shape {
            op: "embed_distribution",
            lhs: p.shape().to_vec(),
            rhs: e,
        });
    }
    for i in 0..p.rows() {
        let row = p.row(i);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&v| v < -SIMPLEX_TOLERANCE) || (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::contract(format!(
                "embed_distribution: row {i} is not a probability distribution (sum {total})"
            )));
        }
    }
    Ok(dists.matmul(table))
}

/// Reads GloVe text vectors for the given tokens (listed in id order).
///
/// Tokens absent from the file keep Gaussian vectors of scale 0.1. The
/// returned table is frozen.
pub fn load_glove(
    path: &Path,
    tokens: &[String],
    dim: usize,
    rng: &mut impl Rng,
) -> Result<(EmbeddingTable, usize)> {
    let index: HashMap<&str, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut table = EmbeddingTable::random(tokens.len(), dim, 0.1, rng);
    let mut found = 0;
    let reader = BufReader::new(File::open(path)?);
    let data = table.matrix.data_mut();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split(' ');
        let Some(token) = parts.next() else { continue };
        let Some(&id) = index.get(token) else { continue };
        let values: Vec<f64> = parts
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path.display(), format!("line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(Error::format(
                path.display(),
                format!("line {}: expected {dim} values, found {}", lineno + 1, values.len()),
            ));
        }
        data[id * dim..(id + 1) * dim].copy_from_slice(&values);
        found += 1;
    }
    table.frozen = true;
    Ok((table, found))
}
