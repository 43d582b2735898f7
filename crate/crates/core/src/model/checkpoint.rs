//! Checkpoints: `manifest.json` (names, shapes, byte offsets) next to
//! `params.bin` (raw little-endian f64).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::Params;

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "params.bin";
const FORMAT: &str = "capgan-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub embedding_frozen: bool,
    #[serde(default)]
    pub generator_embedding_frozen: bool,
    pub vocab: Option<Vocabulary>,
    pub blob: String,
    pub params: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Option<Vocabulary>,
}

pub fn save_checkpoint(dir: &Path, model: &Model, vocab: Option<&Vocabulary>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut params = Vec::new();
    model.visit("", &mut |name, t| {
        params.push(ManifestEntry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        config: model.config.clone(),
        embedding_frozen: model.embedding.frozen,
        generator_embedding_frozen: model.generator.embedding.as_ref().is_some_and(|e| e.frozen),
        vocab: vocab.cloned(),
        blob: BLOB.into(),
        params,
    };
    fs::write(dir.join(BLOB), blob)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let origin = manifest_path.display().to_string();
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::format(&origin, e.to_string()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&origin, e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::format(
            &origin,
            format!("unsupported checkpoint {} v{}", manifest.format, manifest.version),
        ));
    }
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::format(blob_path.display(), e.to_string()))?;
    let entries: HashMap<&str, &ManifestEntry> = manifest.params.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut model = Model::zeros(manifest.config.clone())?;
    model.embedding.frozen = manifest.embedding_frozen;
    if let Some(e) = &mut model.generator.embedding {
        e.frozen = manifest.generator_embedding_frozen;
    }
    let mut problem: Option<String> = None;
    let mut expected = 0;
    model.visit_mut("", &mut |name, t| {
        let Some(entry) = entries.get(name.as_str()) else {
            problem.get_or_insert(format!("missing parameter {name}"));
            return;
        };
        if entry.shape != t.shape() {
            problem.get_or_insert(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                entry.shape,
                t.shape()
            ));
            return;
        }
        let end = entry.offset + t.len() * 8;
        if end > blob.len() {
            problem.get_or_insert(format!("parameter {name} runs past the end of the blob"));
            return;
        }
        for (dst, chunk) in t.data_mut().iter_mut().zip(blob[entry.offset..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        expected += t.len() * 8;
    });
    if problem.is_none() && (entries.len() != model.named("").len() || expected != blob.len()) {
        problem = Some(format!(
            "manifest lists {} parameters in {} bytes, model needs {} in {expected}",
            entries.len(),
            blob.len(),
            model.named("").len()
        ));
    }
    if let Some(p) = problem {
        return Err(Error::format(&origin, p));
    }
    Ok(Checkpoint {
        model,
        vocab: manifest.vocab,
    })
}
