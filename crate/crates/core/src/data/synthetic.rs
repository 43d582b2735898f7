//! A small captioning task that is learnable by construction: each image is
//! a set of attribute one-hot blocks and its caption spells them out.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::captions::{build_records, CaptionRecord, CocoAnnotation, CocoCaptions, CocoImage};
use super::features::FeatureTable;
use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub surfaces: Vec<String>,
    pub d_img: usize,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            colors: words(&["red", "green", "blue", "yellow"]),
            shapes: words(&["cube", "sphere", "cone", "cylinder"]),
            surfaces: words(&["table", "floor", "shelf", "carpet"]),
            d_img: 64,
            noise_sigma: 0.1,
            n_train: 500,
            n_val: 100,
            seed: 0,
        }
    }
}

/// Indices of (color₁, shape, color₂, surface) for one image.
pub type Attributes = [usize; 4];

impl SyntheticSpec {
    /// Width of the concatenated one-hot blocks.
    pub fn block_width(&self) -> usize {
        2 * self.colors.len() + self.shapes.len() + self.surfaces.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.is_empty() || self.shapes.is_empty() || self.surfaces.is_empty() {
            return Err(Error::contract("synthetic spec: attribute lists must be non-empty"));
        }
        if self.n_val == 0 || self.n_train == 0 {
            return Err(Error::contract("synthetic spec: n_train and n_val must be at least 1"));
        }
        if self.d_img < self.block_width() {
            return Err(Error::contract(format!(
                "synthetic spec: d_img {} is smaller than the {} attribute columns",
                self.d_img,
                self.block_width()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::contract("synthetic spec: noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    fn offsets(&self) -> [usize; 4] {
        let c = self.colors.len();
        let s = self.shapes.len();
        [0, c, c + s, 2 * c + s]
    }

    fn sizes(&self) -> [usize; 4] {
        [self.colors.len(), self.shapes.len(), self.colors.len(), self.surfaces.len()]
    }

    pub fn caption(&self, a: Attributes) -> String {
        format!(
            "a {} {} on a {} {}",
            self.colors[a[0]], self.shapes[a[1]], self.colors[a[2]], self.surfaces[a[3]]
        )
    }

    /// The noiseless feature row of `a`.
    pub fn features(&self, a: Attributes) -> Vec<f64> {
        let mut row = vec![0.0; self.d_img];
        for (k, off) in self.offsets().iter().enumerate() {
            row[off + a[k]] = 1.0;
        }
        row
    }

    /// Nearest one-hot decoding: the argmax within each attribute block.
    pub fn recover_attributes(&self, row: &[f64]) -> Attributes {
        let mut out = [0; 4];
        for k in 0..4 {
            let block = &row[self.offsets()[k]..self.offsets()[k] + self.sizes()[k]];
            out[k] = block
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > block[best] { i } else { best });
        }
        out
    }

    /// Whether `tokens` is a sentence of the caption template.
    pub fn matches_template<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        let t: Vec<&str> = tokens.iter().map(|s| s.as_ref()).collect();
        let has = |list: &[String], w: &str| list.iter().any(|x| x == w);
        t.len() == 7
            && t[0] == "a"
            && has(&self.colors, t[1])
            && has(&self.shapes, t[2])
            && t[3] == "on"
            && t[4] == "a"
            && has(&self.colors, t[5])
            && has(&self.surfaces, t[6])
    }
}

/// A generated dataset, in memory and in its on-disk file forms.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Vec<CaptionRecord>,
    pub val: Vec<CaptionRecord>,
    pub features: FeatureTable,
    pub vocab: Vocabulary,
    pub attributes: Vec<Attributes>,
    pub train_captions: CocoCaptions,
    pub val_captions: CocoCaptions,
}

pub const MAX_LEN: usize = 20;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let n = spec.n_train + spec.n_val;
    let sizes = spec.sizes();
    let mut rows = Vec::with_capacity(n * spec.d_img);
    let mut attributes = Vec::with_capacity(n);
    let mut train_captions = CocoCaptions::default();
    let mut val_captions = CocoCaptions::default();
    for i in 0..n {
        let a: Attributes = std::array::from_fn(|k| rng.random_range(0..sizes[k]));
        let mut row = spec.features(a);
        if spec.noise_sigma > 0.0 {
            row.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        rows.extend(row);
        attributes.push(a);
        let id = i as u64 + 1;
        let target = if i < spec.n_train { &mut train_captions } else { &mut val_captions };
        target.images.push(CocoImage { id });
        target.annotations.push(CocoAnnotation {
            image_id: id,
            caption: spec.caption(a),
        });
    }
    let features = FeatureTable::new(Tensor::matrix(n, spec.d_img, rows), (1..=n as u64).collect())?;
    let train_groups = train_captions.grouped();
    let corpus: Vec<Vec<String>> = train_groups.iter().flat_map(|g| g.captions.clone()).collect();
    let vocab = Vocabulary::build(&corpus, 1)?;
    let train = build_records(&train_groups, &vocab, &features, MAX_LEN).records;
    let val = build_records(&val_captions.grouped(), &vocab, &features, MAX_LEN).records;
    Ok(SyntheticData {
        train,
        val,
        features,
        vocab,
        attributes,
        train_captions,
        val_captions,
    })
}

impl SyntheticData {
    /// Writes `train.json`, `val.json`, `features.capf` and `vocab.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.train_captions.save(&dir.join("train.json"))?;
        self.val_captions.save(&dir.join("val.json"))?;
        self.features.save(&dir.join("features.capf"))?;
        fs::write(dir.join("vocab.json"), serde_json::to_string_pretty(&self.vocab)?)?;
        Ok(())
    }

    /// Tokenized caption of record `image_id`.
    pub fn caption_tokens(&self, spec: &SyntheticSpec, image_id: u64) -> Vec<String> {
        tokenize(&spec.caption(self.attributes[image_id as usize - 1]))
    }
}
