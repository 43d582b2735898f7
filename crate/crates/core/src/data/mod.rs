//! Vocabulary, caption and feature ingestion, the synthetic dataset and batching.

mod batch;
mod captions;
mod features;
mod synthetic;
mod vocab;

pub use batch::{batch_iter, one_hot, Batch, BatchIter};
pub use captions::{
    build_records, encode_caption, load_captions, CaptionRecord, CocoAnnotation, CocoCaptions, CocoImage,
    ImageCaptions, LoadedCaptions,
};
pub use features::FeatureTable;
pub use synthetic::{generate_synthetic, Attributes, SyntheticData, SyntheticSpec, MAX_LEN};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};
