//! SAGE-style link-prediction model with hand-derived gradients.
//!
//! Tensors are row-major, vectors are columns and token sequences are
//! `d × T` matrices with one column per token.

mod checkpoint;
mod encoder;
pub mod ops;
mod tape;
mod tensor;
mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{config_path, load_checkpoint, load_into, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{Batch, ForwardStats, Model, PairInput, Role, SourceInput};
pub use tape::{Gradients, ParamError, ParamGrad, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
pub use tree::{build_activities, build_trees, Activity, FeatureSource, NeighborStrategy, TreeNode, TreeSpec, TreeStats};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("in-batch negatives need at least two pairs")]
    NoNegatives,
    #[error("dimension {0} must be even")]
    OddDimension(usize),
    #[error("attention mask row {0} allows nothing")]
    EmptyMaskRow(usize),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderMode {
    Single,
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    Mean,
    Attention,
    SelfAttention,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    Cosine,
    Mlp { hidden: Vec<usize> },
    InBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    RegularCausal,
    PrefixCausal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionMode {
    None,
    Sinusoidal,
    Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    /// `H`: the encoder output is split into this many tokens.
    pub heads: usize,
    /// `d`: token width; the encoder output has `H·d` entries.
    pub token_dim: usize,
    /// `N`: activity slots.
    pub seq_len: usize,
    /// `N1`: activities before the long-term prediction point.
    pub history_len: usize,
    pub mask: MaskMode,
    pub positions: PositionMode,
    /// `λ` of the long-term loss.
    pub long_term_weight: f64,
    /// Append the destination's sampled neighbors to the activity sequence.
    pub use_dst_neighbors: bool,
    /// Edge type whose recent edges form the activity sequence.
    pub activity_edge_type: u16,
}

impl TemporalConfig {
    pub fn new(heads: usize, token_dim: usize, seq_len: usize, future_len: usize) -> Self {
        Self {
            heads,
            token_dim,
            seq_len,
            history_len: seq_len.saturating_sub(future_len),
            mask: MaskMode::PrefixCausal,
            positions: PositionMode::Sinusoidal,
            long_term_weight: 1.0,
            use_dst_neighbors: false,
            activity_edge_type: 1,
        }
    }

    pub fn future_len(&self) -> usize {
        self.seq_len - self.history_len
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.heads == 0 {
            return bad("H must be at least 1");
        }
        if self.token_dim == 0 {
            return bad("d must be at least 1");
        }
        if self.history_len == 0 || self.history_len > self.seq_len {
            return bad("N1 must satisfy 1 <= N1 <= N");
        }
        if self.positions != PositionMode::None && self.token_dim % 2 != 0 {
            return Err(ModelError::OddDimension(self.token_dim));
        }
        if !(self.long_term_weight >= 0.0 && self.long_term_weight.is_finite()) {
            return bad("long-term weight must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature width per node type.
    pub feature_dims: BTreeMap<u16, usize>,
    /// ID-embedding table size per node type (dense index space).
    pub node_counts: BTreeMap<u16, usize>,
    pub hidden_dim: usize,
    /// Number of aggregation layers (hops).
    pub layers: usize,
    pub encoder: EncoderMode,
    pub aggregator: Aggregator,
    pub decoder: DecoderKind,
    /// Logit scale `1/τ` divisor for the cosine and in-batch decoders.
    pub temperature: f64,
    pub id_embeddings: bool,
    pub id_dim: usize,
    /// Mean aggregation weighted by edge weight / PPR score.
    pub weighted_mean: bool,
    pub temporal: Option<TemporalConfig>,
    /// Scale of the uniform initialisation, relative to `1/√fan_in`.
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn new(feature_dims: BTreeMap<u16, usize>, hidden_dim: usize, layers: usize) -> Self {
        Self {
            feature_dims,
            node_counts: BTreeMap::new(),
            hidden_dim,
            layers,
            encoder: EncoderMode::Single,
            aggregator: Aggregator::Mean,
            decoder: DecoderKind::Cosine,
            temperature: 0.1,
            id_embeddings: false,
            id_dim: 32,
            weighted_mean: false,
            temporal: None,
            init_scale: 1.0,
        }
    }

    /// Width of the layer-0 node representation.
    pub fn base_dim(&self) -> usize {
        self.hidden_dim + if self.id_embeddings { self.id_dim } else { 0 }
    }

    /// Width of the encoder output.
    pub fn output_dim(&self) -> usize {
        if self.layers == 0 {
            self.base_dim()
        } else {
            self.hidden_dim
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden_dim == 0 {
            return bad("hidden dimension must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.id_embeddings {
            if self.id_dim == 0 {
                return bad("id dimension must be positive".into());
            }
            if let Some(t) = self.feature_dims.keys().find(|t| !self.node_counts.contains_key(t)) {
                return bad(format!("no ID table size for node type {t}"));
            }
        }
        if let DecoderKind::Mlp { hidden } = &self.decoder {
            if hidden.iter().any(|h| *h == 0) {
                return bad("MLP hidden sizes must be positive".into());
            }
        }
        if let Some(t) = &self.temporal {
            t.validate()?;
            if self.output_dim() != t.heads * t.token_dim {
                return bad(format!("encoder output {} != H·d = {}", self.output_dim(), t.heads * t.token_dim));
            }
        }
        Ok(())
    }
}
