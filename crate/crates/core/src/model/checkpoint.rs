//! Checkpoint file: one line of compact JSON manifest, a newline, then the
//! parameter values as raw little-endian IEEE-754 in manifest order.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::linalg::{Precision, Scalar};
use super::params::{ArraySpec, Layout, ModelConfig, Parameters};
use super::vocab::Vocab;
use crate::unify::FormatVariant;
use crate::util::fnv1a;
use crate::{Error, Result};

const FORMAT: &str = "unidu-checkpoint/1";

/// Model weights in either precision.
#[derive(Debug, Clone)]
pub enum Weights {
    Single(Parameters<f32>),
    Double(Parameters<f64>),
}

/// Runs `$body` with `$p` bound to the typed parameters inside a [`Weights`].
#[macro_export]
macro_rules! with_weights {
    ($w:expr, $p:ident => $body:expr) => {
        match $w {
            $crate::model::Weights::Single($p) => $body,
            $crate::model::Weights::Double($p) => $body,
        }
    };
}

impl Weights {
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Weights> {
        Ok(match config.precision {
            Precision::SINGLE => Weights::Single(Parameters::init(config, vocab_size, seed)?),
            Precision::DOUBLE => Weights::Double(Parameters::init(config, vocab_size, seed)?),
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        with_weights!(self, p => p.layout())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout().config
    }

    fn to_bytes(&self) -> Vec<u8> {
        fn dump<T: Scalar>(data: &[T]) -> Vec<u8> {
            let mut out = Vec::with_capacity(data.len() * T::BYTES);
            for &x in data {
                x.write_le(&mut out);
            }
            out
        }
        with_weights!(self, p => dump(&p.data))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub variant: FormatVariant,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub weights: Weights,
    pub strategy_state: Option<serde_json::Value>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    vocab: Vocab,
    arrays: Vec<ArraySpec>,
    blob_bytes: usize,
    #[serde(default)]
    strategy_state: Option<serde_json::Value>,
    metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(vocab: Vocab, weights: Weights) -> Self {
        Checkpoint {
            vocab,
            weights,
            strategy_state: None,
            meta: CheckpointMeta::default(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blob = self.weights.to_bytes();
        let manifest = Manifest {
            format: FORMAT.into(),
            config: self.weights.config().clone(),
            vocab: self.vocab.clone(),
            arrays: self.weights.layout().arrays().to_vec(),
            blob_bytes: blob.len(),
            strategy_state: self.strategy_state.clone(),
            metadata: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serialization is infallible");
        out.push(b'\n');
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
        }
        let blob = &bytes[nl + 1..];
        if blob.len() != manifest.blob_bytes {
            return Err(Error::Checkpoint(format!(
                "blob has {} bytes, manifest says {}",
                blob.len(),
                manifest.blob_bytes
            )));
        }
        let layout = Arc::new(
            Layout::new(&manifest.config, manifest.vocab.len())
                .map_err(|e| Error::Checkpoint(format!("bad model configuration: {e}")))?,
        );
        if layout.arrays() != manifest.arrays.as_slice() {
            return Err(Error::Checkpoint("array table does not match configuration".into()));
        }
        fn load<T: Scalar>(layout: Arc<Layout>, blob: &[u8]) -> Result<Parameters<T>> {
            if blob.len() != layout.total() * T::BYTES {
                return Err(Error::Checkpoint("blob size does not match precision".into()));
            }
            let data = blob.chunks_exact(T::BYTES).map(T::read_le).collect();
            Parameters::from_data(layout, data)
        }
        let weights = match manifest.config.precision {
            Precision::SINGLE => Weights::Single(load(layout, blob)?),
            Precision::DOUBLE => Weights::Double(load(layout, blob)?),
        };
        Ok(Checkpoint {
            vocab: manifest.vocab,
            weights,
            strategy_state: manifest.strategy_state,
            meta: manifest.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Content hash of the parameter blob, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a(&self.weights.to_bytes()))
    }
}
