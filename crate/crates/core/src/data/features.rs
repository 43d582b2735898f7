//! Precomputed image features in the `CAPF` sidecar format.
//!
//! Layout (little-endian): magic `CAPF`, `u32` version, `u32` row count,
//! `u32` row width, the rows as `f64`, then one `u64` image id per row.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CAPF";
const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    rows: Tensor,
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl FeatureTable {
    /// `rows` is `[n, d_img]`; `ids[i]` is the image id of row `i`.
    pub fn new(rows: Tensor, ids: Vec<u64>) -> Result<Self> {
        if rows.ndim() != 2 || rows.rows() != ids.len() {
            return Err(Error::contract(format!(
                "feature table: {} ids for rows of shape {:?}",
                ids.len(),
                rows.shape()
            )));
        }
        for r in 0..rows.rows() {
            if !rows.row(r).iter().all(|v| v.is_finite()) {
                return Err(Error::contract(format!(
                    "feature table: row {r} (image {}) is not finite",
                    ids[r]
                )));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::contract(format!("feature table: duplicate image id {id}")));
            }
        }
        Ok(FeatureTable { rows, ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_img(&self) -> usize {
        self.rows.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn row_of(&self, image_id: u64) -> Option<usize> {
        self.index.get(&image_id).copied()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        self.rows.row(row)
    }

    /// Stacks the given rows into a `[len, d_img]` matrix.
    pub fn gather(&self, rows: &[usize]) -> Tensor {
        let d = self.d_img();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(self.row(r));
        }
        Tensor::matrix(rows.len(), d, out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.rows.len() * 8 + self.ids.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_img() as u32).to_le_bytes());
        for v in self.rows.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |detail: String| Error::format(origin, detail);
        if bytes.len() < HEADER || &bytes[..4] != MAGIC {
            return Err(bad("missing CAPF header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let expected = HEADER + n * d * 8 + n * 8;
        if bytes.len() != expected {
            return Err(bad(format!(
                "header declares {n} rows of width {d} ({expected} bytes), file has {} bytes",
                bytes.len()
            )));
        }
        let body = &bytes[HEADER..];
        let values: Vec<f64> = body[..n * d * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ids: Vec<u64> = body[n * d * 8..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureTable::new(Tensor::matrix(n, d, values), ids).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::format(path.display(), e.to_string()))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_table_round_trip() {
        let table = FeatureTable::new(Tensor::zeros(&[3, 4]), vec![10, 20, 30]).unwrap();
        let back = FeatureTable::from_bytes(&table.to_bytes(), "mem").unwrap();
        assert_eq!(back, table);
        for id in [10, 20, 30] {
            let row = back.row_of(id).unwrap();
            assert_eq!(back.row(row), &[0.0; 4]);
        }
        assert_eq!(back.row_of(40), None);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let values = vec![-0.0, 1e-300, f64::MAX, 3.25, -7.5, f64::MIN_POSITIVE];
        let table = FeatureTable::new(Tensor::matrix(2, 3, values), vec![u64::MAX, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.capf");
        table.save(&path).unwrap();
        let back = FeatureTable::load(&path).unwrap();
        assert!(back.rows().bit_eq(table.rows()));
        assert_eq!(back.ids(), table.ids());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let table = FeatureTable::new(Tensor::zeros(&[2, 2048]), vec![1, 2]).unwrap();
        let mut bytes = table.to_bytes();
        bytes.truncate(bytes.len() - 100);
        let err = FeatureTable::from_bytes(&bytes, "f.capf").unwrap_err();
        assert!(err.to_string().contains("2048"), "{err}");
        assert!(FeatureTable::from_bytes(b"NOPE", "x").is_err());
    }

    #[test]
    fn nan_row_is_named() {
        let mut rows = Tensor::zeros(&[3, 2]);
        rows.data_mut()[5] = f64::NAN;
        let bytes = {
            let mut t = FeatureTable::new(Tensor::zeros(&[3, 2]), vec![1, 2, 3]).unwrap();
            t.rows = rows;
            t.to_bytes()
        };
        let err = FeatureTable::from_bytes(&bytes, "f.capf").unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }
}
