//! Training throughput machinery: grouping and slicing, the adaptive
//! neighbor schedule, MLP-init, local gradient aggregation, the prefetch
//! queue and the trainer that ties them together.

mod adaptive;
mod grouping;
mod lga;
mod mlp_init;
mod prefetch;
mod trainer;

use std::io::BufRead;

use thiserror::Error;

use crate::graph::{HeteroGraph, NodeRef};
use crate::model::{build_activities, build_trees, Activity, ModelError, ParamError, TreeNode, TreeSpec, TreeStats};
use crate::samplers::SampleError;

pub use adaptive::{adaptive_step, AdaptiveConfig, AdaptiveState};
pub use grouping::{
    engine_query_count, flatten_with_mask, group_and_slice, GroupedBatch, QueryCounts, DUMMY_ITEM_ID,
};
pub use lga::local_gradient_aggregate;
pub use mlp_init::{mlp_init, MlpInitConfig, MlpInitReport};
pub use prefetch::{prefetch_pipeline, PrefetchConfig, PrefetchStats, PrefetchStream};
pub use trainer::{
    evaluate, grouped_step, prepare_batch, slice_loss, EpochMetrics, PreparedBatch, TrainCounters, Trainer,
    TrainerConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("records line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("producer {shard} failed on batch {index}: {detail}")]
    Producer { shard: usize, index: usize, detail: String },
    #[error("gradient shapes differ: {0}")]
    Shape(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled (member, item) interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingRecord {
    pub member: NodeRef,
    pub item: NodeRef,
    pub label: f64,
    pub timestamp: i64,
}

/// Parses `member_type, member_id, item_type, item_id, label, timestamp_ms`
/// tab-separated lines. Blank lines and `#` comments are skipped.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<TrainingRecord>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| PipelineError::Parse { line: i + 1, detail };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let int = |s: &str, what: &str| s.trim().parse::<u64>().map_err(|_| bad(format!("bad {what} {s:?}")));
        let member_type = u16::try_from(int(f[0], "member type")?).map_err(|_| bad("member type out of range".into()))?;
        let item_type = u16::try_from(int(f[2], "item type")?).map_err(|_| bad("item type out of range".into()))?;
        let label = match f[4].trim() {
            "0" => 0.0,
            "1" => 1.0,
            other => return Err(bad(format!("label must be 0 or 1, found {other:?}"))),
        };
        let timestamp = f[5].trim().parse::<i64>().map_err(|_| bad(format!("bad timestamp {:?}", f[5])))?;
        out.push(TrainingRecord {
            member: NodeRef::key(member_type, int(f[1], "member id")?),
            item: NodeRef::key(item_type, int(f[3], "item id")?),
            label,
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_records<W: std::io::Write>(records: &[TrainingRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.member.node_type, r.member.node_id, r.item.node_type, r.item.node_id, r.label as u8, r.timestamp
        )?;
    }
    Ok(())
}

/// What the trainer needs from a graph engine: compute trees for a set of
/// roots and a member's recent activities.
pub trait GraphQuery: Send + Sync {
    fn trees(&self, roots: &[NodeRef], spec: &TreeSpec) -> (Vec<Result<TreeNode, SampleError>>, TreeStats);

    fn activities(&self, member: NodeRef, edge_type: u16, before_ts: i64, n: usize) -> Result<Vec<Activity>, SampleError>;
}

impl GraphQuery for HeteroGraph {
    fn trees(&self, roots: &[NodeRef], spec: &TreeSpec) -> (Vec<Result<TreeNode, SampleError>>, TreeStats) {
        let resolved: Vec<NodeRef> = roots.iter().map(|r| self.resolve_ref(*r).unwrap_or(*r)).collect();
        build_trees(self, &resolved, spec)
    }

    fn activities(&self, member: NodeRef, edge_type: u16, before_ts: i64, n: usize) -> Result<Vec<Activity>, SampleError> {
        build_activities(self, member, edge_type, before_ts, n)
    }
}

impl<T: GraphQuery + ?Sized> GraphQuery for &T {
    fn trees(&self, roots: &[NodeRef], spec: &TreeSpec) -> (Vec<Result<TreeNode, SampleError>>, TreeStats) {
        (**self).trees(roots, spec)
    }

    fn activities(&self, member: NodeRef, edge_type: u16, before_ts: i64, n: usize) -> Result<Vec<Activity>, SampleError> {
        (**self).activities(member, edge_type, before_ts, n)
    }
}

impl<T: GraphQuery + ?Sized> GraphQuery for std::sync::Arc<T> {
    fn trees(&self, roots: &[NodeRef], spec: &TreeSpec) -> (Vec<Result<TreeNode, SampleError>>, TreeStats) {
        (**self).trees(roots, spec)
    }

    fn activities(&self, member: NodeRef, edge_type: u16, before_ts: i64, n: usize) -> Result<Vec<Activity>, SampleError> {
        (**self).activities(member, edge_type, before_ts, n)
    }
}
