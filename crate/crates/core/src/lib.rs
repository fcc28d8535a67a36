//! Unified generative dialogue understanding: five dialogue tasks cast into
//! one text-to-text format, a small encoder-decoder trained from scratch
//! under eight multitask strategies, and the matching evaluation suite.

pub mod corpus;
mod error;
pub mod metrics;
pub mod model;
pub mod strategies;
mod task;
pub mod trainer;
pub mod unify;
mod util;

pub use corpus::{load_corpus, Corpus, CorpusStats, Dialogue, Ontology};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{Checkpoint, ModelConfig};
pub use strategies::{StrategyKind, StrategyState, TaskFeature};
pub use task::{Role, Split, Task};
pub use trainer::{RunLog, TrainConfig};
pub use unify::{FormatVariant, UnifiedRecord};
pub use util::fnv1a;
