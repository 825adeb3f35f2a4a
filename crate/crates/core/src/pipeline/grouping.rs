use std::collections::HashMap;

use serde::Serialize;

use super::{PipelineError, TrainingRecord};
use crate::graph::NodeRef;

/// Item id of padded slots.
pub const DUMMY_ITEM_ID: u64 = u64::MAX;

/// One member with exactly `group_size` item slots.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedBatch {
    pub member: NodeRef,
    pub items: Vec<NodeRef>,
    pub labels: Vec<f64>,
    /// `true` for real slots, `false` for padding.
    pub mask: Vec<bool>,
    pub timestamps: Vec<i64>,
}

impl GroupedBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn real_items(&self) -> Vec<NodeRef> {
        self.items.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(i, _)| *i).collect()
    }

    /// Earliest timestamp among real slots.
    pub fn first_timestamp(&self) -> i64 {
        self.timestamps.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(t, _)| *t).min().unwrap_or(0)
    }

    /// A single-record batch (the ungrouped path).
    pub fn single(r: &TrainingRecord) -> Self {
        Self { member: r.member, items: vec![r.item], labels: vec![r.label], mask: vec![true], timestamps: vec![r.timestamp] }
    }
}

/// Groups records by member (members in order of first appearance, records
/// in input order) and slices each group into padded batches.
pub fn group_and_slice(records: &[TrainingRecord], group_size: usize) -> Result<Vec<GroupedBatch>, PipelineError> {
    if group_size == 0 {
        return Err(PipelineError::Config("group_size must be at least 1".into()));
    }
    let mut order: Vec<NodeRef> = Vec::new();
    let mut groups: HashMap<NodeRef, Vec<&TrainingRecord>> = HashMap::new();
    for r in records {
        groups
            .entry(r.member)
            .or_insert_with(|| {
                order.push(r.member);
                Vec::new()
            })
            .push(r);
    }
    let mut out = Vec::new();
    for member in order {
        for chunk in groups[&member].chunks(group_size) {
            let pad = group_size - chunk.len();
            let dummy = NodeRef::key(chunk[0].item.node_type, DUMMY_ITEM_ID);
            out.push(GroupedBatch {
                member,
                items: chunk.iter().map(|r| r.item).chain(std::iter::repeat(dummy).take(pad)).collect(),
                labels: chunk.iter().map(|r| r.label).chain(std::iter::repeat(0.0).take(pad)).collect(),
                mask: std::iter::repeat(true).take(chunk.len()).chain(std::iter::repeat(false).take(pad)).collect(),
                timestamps: chunk.iter().map(|r| r.timestamp).chain(std::iter::repeat(0).take(pad)).collect(),
            });
        }
    }
    Ok(out)
}

/// Real `(member, item, label, timestamp)` slots of `batches`, in order.
pub fn flatten_with_mask(batches: &[GroupedBatch]) -> Vec<TrainingRecord> {
    batches
        .iter()
        .flat_map(|b| {
            (0..b.len()).filter(|i| b.mask[*i]).map(move |i| TrainingRecord {
                member: b.member,
                item: b.items[i],
                label: b.labels[i],
                timestamp: b.timestamps[i],
            })
        })
        .collect()
}

/// Compute-graph queries issued to the engine, one per root node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryCounts {
    pub member_queries: usize,
    pub item_queries: usize,
}

impl QueryCounts {
    pub fn total(&self) -> usize {
        self.member_queries + self.item_queries
    }
}

/// Closed-form query counts without grouping (one member and one item query
/// per record) and with grouping (one member query per batch, one item
/// query per real item).
pub fn engine_query_count(records: &[TrainingRecord], group_size: usize) -> Result<(QueryCounts, QueryCounts), PipelineError> {
    if group_size == 0 {
        return Err(PipelineError::Config("group_size must be at least 1".into()));
    }
    let before = QueryCounts { member_queries: records.len(), item_queries: records.len() };
    let mut per_member: HashMap<NodeRef, usize> = HashMap::new();
    for r in records {
        *per_member.entry(r.member).or_default() += 1;
    }
    let after = QueryCounts {
        member_queries: per_member.values().map(|c| c.div_ceil(group_size)).sum(),
        item_queries: records.len(),
    };
    Ok((before, after))
}
