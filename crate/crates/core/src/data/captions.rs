//! COCO-style caption files: `{"images": [{"id"}], "annotations": [{"image_id", "caption"}]}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use super::vocab::{tokenize, Vocabulary, EOS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub image_id: u64,
    pub caption: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CocoCaptions {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
}

impl CocoCaptions {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::format(path.display(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Tokenized captions grouped by image, in order of first appearance
    /// (the `images` array first, then any ids only seen in annotations).
    pub fn grouped(&self) -> Vec<ImageCaptions> {
        let mut order: Vec<u64> = Vec::new();
        let mut groups: HashMap<u64, Vec<Vec<String>>> = HashMap::new();
        let ids = self
            .images
            .iter()
            .map(|i| i.id)
            .chain(self.annotations.iter().map(|a| a.image_id));
        for id in ids {
            if let std::collections::hash_map::Entry::Vacant(e) = groups.entry(id) {
                e.insert(Vec::new());
                order.push(id);
            }
        }
        for ann in &self.annotations {
            groups
                .get_mut(&ann.image_id)
                .expect("registered above")
                .push(tokenize(&ann.caption));
        }
        order
            .into_iter()
            .map(|id| ImageCaptions {
                image_id: id,
                captions: groups.remove(&id).unwrap_or_default(),
            })
            .collect()
    }
}

/// All tokenized captions of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageCaptions {
    pub image_id: u64,
    pub captions: Vec<Vec<String>>,
}

/// One image with its encoded references.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionRecord {
    pub image_id: u64,
    pub feature_row: usize,
    /// Encoded references, each `<eos>`-terminated and at most `max_len` long.
    pub references: Vec<Vec<usize>>,
    /// The tokenized references as written, used for scoring.
    pub reference_tokens: Vec<Vec<String>>,
}

/// Ids of `tokens` truncated to `max_len − 1`, followed by `<eos>`.
pub fn encode_caption<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let keep = max_len.saturating_sub(1).min(tokens.len());
    let mut ids = vocab.encode(&tokens[..keep]);
    ids.push(EOS);
    ids
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCaptions {
    pub records: Vec<CaptionRecord>,
    /// Image ids skipped for lack of a feature row.
    pub missing_features: Vec<u64>,
    /// Image ids skipped for having no captions.
    pub without_captions: Vec<u64>,
}

pub fn build_records(
    groups: &[ImageCaptions],
    vocab: &Vocabulary,
    features: &FeatureTable,
    max_len: usize,
) -> LoadedCaptions {
    let mut out = LoadedCaptions::default();
    for g in groups {
        if g.captions.is_empty() {
            out.without_captions.push(g.image_id);
            continue;
        }
        let Some(row) = features.row_of(g.image_id) else {
            out.missing_features.push(g.image_id);
            continue;
        };
        out.records.push(CaptionRecord {
            image_id: g.image_id,
            feature_row: row,
            references: g
                .captions
                .iter()
                .map(|c| encode_caption(c, vocab, max_len))
                .collect(),
            reference_tokens: g.captions.clone(),
        });
    }
    if !out.missing_features.is_empty() {
        log::warn!(
            "skipped {} images without feature rows",
            out.missing_features.len()
        );
    }
    out
}

/// Reads a caption file and encodes it against `vocab`.
pub fn load_captions(
    path: &Path,
    vocab: &Vocabulary,
    features: &FeatureTable,
    max_len: usize,
) -> Result<LoadedCaptions> {
    let coco = CocoCaptions::load(path)?;
    Ok(build_records(&coco.grouped(), vocab, features, max_len))
}
