//! Core of the LiGNN desk-scale pipeline.
//!
//! * [`graph`]: immutable heterogeneous CSR graph built from TSV rows.
//! * [`samplers`]: multi-hop random/weighted sampling, forward-push and
//!   random-walk personalized PageRank, temporal last-N sampling.
//! * [`densify`]: artificial edges from cold-start nodes to similar
//!   high-degree nodes.
//! * [`model`]: SAGE-style encoders, decoders, the temporal sequence
//!   encoder and the reverse-mode tape used for gradients.
//! * [`pipeline`]: grouping & slicing, adaptive neighbor sampling,
//!   MLP-init, local gradient aggregation, prefetching and the trainer.

pub mod densify;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod samplers;
pub mod synthetic;

pub use graph::{EdgeKind, GraphBuildReport, HeteroGraph, NodeRef, Schema};
