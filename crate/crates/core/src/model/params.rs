use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{Precision, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 256,
            ffn_mult: 4,
            dropout: 0.0,
            precision: Precision::DOUBLE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 || self.ffn_mult == 0 {
            return Err(Error::invalid("max_len must be >= 2 and ffn_mult >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }
}

/// Name, shape and offset of one parameter array inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ArraySpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIx {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIx {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIx {
    pub q: LinearIx,
    pub k: LinearIx,
    pub v: LinearIx,
    pub o: LinearIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIx {
    pub up: LinearIx,
    pub down: LinearIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerIx {
    pub ln1: NormIx,
    pub attn: AttnIx,
    pub ln2: NormIx,
    pub ffn: FfnIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerIx {
    pub ln1: NormIx,
    pub self_attn: AttnIx,
    pub ln2: NormIx,
    pub cross: AttnIx,
    pub ln3: NormIx,
    pub ffn: FfnIx,
}

/// Placement of every named array of an encoder-decoder in one flat buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub config: ModelConfig,
    pub vocab_size: usize,
    arrays: Vec<ArraySpec>,
    total: usize,
    pub(crate) tok_emb: usize,
    pub(crate) enc_pos: usize,
    pub(crate) dec_pos: usize,
    pub(crate) enc: Vec<EncLayerIx>,
    pub(crate) enc_norm: NormIx,
    pub(crate) dec: Vec<DecLayerIx>,
    pub(crate) dec_norm: NormIx,
    pub(crate) head: LinearIx,
}

struct Builder {
    arrays: Vec<ArraySpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let spec = ArraySpec { name, shape, offset };
        self.total += spec.len();
        self.arrays.push(spec);
        offset
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> LinearIx {
        LinearIx {
            w: self.push(format!("{prefix}.w"), vec![din, dout]),
            b: self.push(format!("{prefix}.b"), vec![dout]),
            din,
            dout,
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIx {
        NormIx {
            g: self.push(format!("{prefix}.g"), vec![d]),
            b: self.push(format!("{prefix}.b"), vec![d]),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIx {
        AttnIx {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIx {
        FfnIx {
            up: self.linear(&format!("{prefix}.up"), d, f),
            down: self.linear(&format!("{prefix}.down"), f, d),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig, vocab_size: usize) -> Result<Layout> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        let d = config.d_model;
        let f = config.ffn_dim();
        let mut b = Builder {
            arrays: Vec::new(),
            total: 0,
        };
        let tok_emb = b.push("tok_emb".into(), vec![vocab_size, d]);
        let enc_pos = b.push("enc_pos".into(), vec![config.max_len, d]);
        let dec_pos = b.push("dec_pos".into(), vec![config.max_len, d]);
        let enc = (0..config.n_enc_layers)
            .map(|l| EncLayerIx {
                ln1: b.norm(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ln2: b.norm(&format!("enc.{l}.ln2"), d),
                ffn: b.ffn(&format!("enc.{l}.ffn"), d, f),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let dec = (0..config.n_dec_layers)
            .map(|l| DecLayerIx {
                ln1: b.norm(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                ln2: b.norm(&format!("dec.{l}.ln2"), d),
                cross: b.attn(&format!("dec.{l}.cross_attn"), d),
                ln3: b.norm(&format!("dec.{l}.ln3"), d),
                ffn: b.ffn(&format!("dec.{l}.ffn"), d, f),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        let head = b.linear("head", d, vocab_size);
        Ok(Layout {
            config: config.clone(),
            vocab_size,
            arrays: b.arrays,
            total: b.total,
            tok_emb,
            enc_pos,
            dec_pos,
            enc,
            enc_norm,
            dec,
            dec_norm,
            head,
        })
    }

    pub fn arrays(&self) -> &[ArraySpec] {
        &self.arrays
    }

    pub fn array(&self, name: &str) -> Option<&ArraySpec> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Arrays of the last encoder layer (the shared representation GradNorm
    /// measures task gradients on).
    pub fn last_encoder_layer(&self) -> Vec<&ArraySpec> {
        let prefix = format!("enc.{}.", self.config.n_enc_layers.saturating_sub(1));
        self.arrays
            .iter()
            .filter(|a| a.name.starts_with(&prefix))
            .collect()
    }
}

/// Named real-valued arrays stored contiguously in layout order. Used both
/// for parameters and for their gradients.
#[derive(Debug, Clone)]
pub struct Tensors<T> {
    layout: Arc<Layout>,
    pub data: Vec<T>,
}

pub type Parameters<T> = Tensors<T>;
pub type Gradients<T> = Tensors<T>;

impl<T: Scalar> Tensors<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![T::zero(); layout.total()];
        Tensors { layout, data }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(Error::Checkpoint(format!(
                "expected {} values, found {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Tensors { layout, data })
    }

    /// Seeded initialisation: uniform weights scaled by fan-in, zero biases,
    /// unit norm gains.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        if T::PRECISION != config.precision {
            return Err(Error::invalid(format!(
                "parameter type is {:?} but config asks for {:?}",
                T::PRECISION,
                config.precision
            )));
        }
        let layout = Arc::new(Layout::new(config, vocab_size)?);
        let mut p = Tensors::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in layout.arrays() {
            let last = spec.name.rsplit('.').next().unwrap_or("");
            let bound = match (spec.shape.len(), last) {
                (_, "g") => {
                    p.data[spec.range()].fill(T::one());
                    continue;
                }
                (1, _) => continue,
                _ if spec.name.ends_with("emb") || spec.name.ends_with("pos") => 0.1,
                _ => (1.0 / spec.shape[0] as f64).sqrt(),
            };
            for x in &mut p.data[spec.range()] {
                *x = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.layout.array(name).map(|s| &self.data[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.array(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensors<T>, scale: T) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * *b;
        }
    }

    /// Euclidean norm over the given arrays.
    pub fn norm_over(&self, arrays: &[&ArraySpec]) -> f64 {
        arrays
            .iter()
            .flat_map(|s| self.data[s.range()].iter())
            .map(|&x| x.to_f64() * x.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn same_shape(&self, other: &Tensors<T>) -> bool {
        self.layout.arrays() == other.layout.arrays()
    }
}
