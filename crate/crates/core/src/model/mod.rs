//! Word-level tokenizer and a small transformer encoder-decoder trained from
//! scratch with exact gradients.

mod adam;
mod checkpoint;
pub mod linalg;
mod params;
mod transformer;
mod vocab;

pub use adam::{apply_update, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta, Weights};
pub use linalg::{Precision, Scalar};
pub use params::{ArraySpec, Gradients, Layout, ModelConfig, Parameters, Tensors};
pub use transformer::ForwardCache;
pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, UNK};

/// Default cap on generated tokens.
pub const DEFAULT_MAX_NEW: usize = 64;
