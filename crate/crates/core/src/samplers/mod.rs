//! Neighbor sampling strategies.
//!
//! The multi-hop and PPR samplers run against an [`AdjacencySource`] so the
//! same code serves in-process calls and the sharded client, which answers
//! each round's adjacency requests with one batched query per shard.

mod multihop;
mod ppr;
mod temporal;
mod walk;

use std::fmt;

use thiserror::Error;

use crate::graph::{EdgeView, GraphError, HeteroGraph, NodeRef};

pub use multihop::{sample_random_multihop, sample_weighted_multihop};
pub use ppr::{ppr_exact, ppr_forward_push, ppr_forward_push_batch, ExactPpr, PprConfig, PushResult};
pub use temporal::sample_temporal_last_n;
pub use walk::{ppr_two_hop_batch, ppr_two_hop_random_walk, WalkConfig, WalkResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Strategy {
    Random = 0,
    Weighted = 1,
    PprPush = 2,
    PprTwoHop = 3,
    Temporal = 4,
}

impl Strategy {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Strategy::Random,
            1 => Strategy::Weighted,
            2 => Strategy::PprPush,
            3 => Strategy::PprTwoHop,
            4 => Strategy::Temporal,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Weighted => "weighted",
            Strategy::PprPush => "ppr-push",
            Strategy::PprTwoHop => "ppr-2hop",
            Strategy::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleEntry {
    pub node: NodeRef,
    /// PPR estimate, visit fraction or (aggregated) edge weight.
    pub score: f64,
    pub hop: u32,
}

/// Sampled neighborhood of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSample {
    pub seed: NodeRef,
    pub strategy: Strategy,
    pub entries: Vec<SampleEntry>,
    /// Set when a push budget stopped the computation early.
    pub truncated: bool,
}

impl NeighborSample {
    pub fn new(seed: NodeRef, strategy: Strategy) -> Self {
        Self { seed, strategy, entries: Vec::new(), truncated: false }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.entries.iter().map(|e| e.node)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("unknown node {0}")]
    UnknownNode(NodeRef),
    #[error("adjacency of {node} unavailable: {detail}")]
    Unavailable { node: NodeRef, detail: String },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

impl From<GraphError> for SampleError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(n) => SampleError::UnknownNode(n),
            other => SampleError::InvalidConfig(other.to_string()),
        }
    }
}

/// Batched access to out-adjacency. One call corresponds to one round of a
/// sampling algorithm; results are positionally aligned with `nodes`.
pub trait AdjacencySource {
    fn fetch_adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<Vec<EdgeView>, SampleError>>;
}

impl AdjacencySource for HeteroGraph {
    fn fetch_adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<Vec<EdgeView>, SampleError>> {
        nodes.iter().map(|n| self.out_edges_all(*n).map_err(SampleError::from)).collect()
    }
}

impl<T: AdjacencySource + ?Sized> AdjacencySource for &T {
    fn fetch_adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<Vec<EdgeView>, SampleError>> {
        (**self).fetch_adjacency(nodes)
    }
}

/// Keeps edges whose type is listed (all edges when `edge_types` is `None`).
pub(crate) fn filter_edges(edges: Vec<EdgeView>, edge_types: Option<&[u16]>) -> Vec<EdgeView> {
    match edge_types {
        None => edges,
        Some(types) => edges.into_iter().filter(|e| types.contains(&e.edge_type)).collect(),
    }
}

#[cfg(test)]
pub(crate) mod test_graphs;
