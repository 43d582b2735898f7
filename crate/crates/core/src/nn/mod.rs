//! Layers shared by the generator and the critic.

mod attention;
mod dropout;
mod embedding;
mod gru;
pub mod init;
mod linear;
mod params;

pub use attention::{attention_fuse, Attention, AttentionParams};
pub use dropout::{dropout_apply, DropoutSpec, Site};
pub use embedding::{embed_distribution, embed_tokens, load_glove, EmbeddingTable, SIMPLEX_TOLERANCE};
pub use gru::{GruCell, GruCellParams, GruInput};
pub use linear::linear;
pub use params::{Binder, Params};
