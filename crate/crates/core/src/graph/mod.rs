//! Immutable heterogeneous graph with per-(source type, edge type) CSR
//! adjacency.
//!
//! Nodes are identified externally by `(node_type, node_id)` and internally
//! by a dense per-type index. Indices are assigned in ascending `node_id`
//! order, so index order and id order agree within a type and a graph built
//! from a permuted input is identical to the original.
//!
//! Every adjacency run is sorted by timestamp (ascending) which makes
//! "edges before `t`" a binary search.

mod build;
mod schema;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

pub use build::{build_graph, EdgeRow, GraphBuildReport, GraphBuilder, RejectReason, RejectedRow, RowSource};
pub use schema::{EdgeKind, Schema, SchemaError};

/// Timestamp sentinel meaning "after everything".
pub const TS_INFINITY: i64 = i64::MAX;

/// Index value of a [`NodeRef`] whose dense index has not been looked up.
pub const UNRESOLVED: u32 = u32::MAX;

/// A typed node reference.
///
/// Equality, hashing and ordering use `(node_type, node_id)` only; `index`
/// is the dense position inside the node type's table and is a lookup hint.
#[derive(Clone, Copy, Debug)]
pub struct NodeRef {
    pub node_type: u16,
    pub node_id: u64,
    pub index: u32,
}

impl NodeRef {
    pub fn new(node_type: u16, node_id: u64, index: u32) -> Self {
        Self { node_type, node_id, index }
    }

    /// A reference known only by its external key.
    pub fn key(node_type: u16, node_id: u64) -> Self {
        Self::new(node_type, node_id, UNRESOLVED)
    }

    pub fn is_resolved(&self) -> bool {
        self.index != UNRESOLVED
    }
}

impl PartialEq for NodeRef {
    fn eq(&self, other: &Self) -> bool {
        self.node_type == other.node_type && self.node_id == other.node_id
    }
}

impl Eq for NodeRef {}

impl Hash for NodeRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.node_type.hash(state);
        self.node_id.hash(state);
    }
}

impl PartialOrd for NodeRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NodeRef {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.node_type, self.node_id).cmp(&(other.node_type, other.node_id))
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_type, self.node_id)
    }
}

/// One outgoing edge as seen from its source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeView {
    pub node: NodeRef,
    pub edge_type: u16,
    pub weight: f64,
    pub timestamp: i64,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeRef),
    #[error("unknown edge type {0}")]
    UnknownEdgeType(u16),
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct NodeTable {
    pub(crate) ids: Vec<u64>,
    pub(crate) lookup: HashMap<u64, u32>,
}

impl NodeTable {
    pub(crate) fn from_sorted(ids: Vec<u64>) -> Self {
        let lookup = ids.iter().enumerate().map(|(i, id)| (*id, i as u32)).collect();
        Self { ids, lookup }
    }
}

/// Dense per-type feature matrix; rows for nodes that had no feature row in
/// the input are zero and flagged absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub(crate) dim: usize,
    pub(crate) data: Vec<f64>,
    pub(crate) present: Vec<bool>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn is_present(&self, index: usize) -> bool {
        self.present.get(index).copied().unwrap_or(false)
    }
}

/// Compressed adjacency for one (source type, edge type) pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Csr {
    pub(crate) offsets: Vec<usize>,
    pub(crate) dst_type: Vec<u16>,
    pub(crate) dst_index: Vec<u32>,
    pub(crate) weight: Vec<f64>,
    pub(crate) timestamp: Vec<i64>,
}

impl Csr {
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.dst_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst_index.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamp
    }

    fn run(&self, index: usize) -> (usize, usize) {
        match (self.offsets.get(index), self.offsets.get(index + 1)) {
            (Some(&s), Some(&e)) => (s, e),
            _ => (0, 0),
        }
    }
}

/// Contiguous adjacency run of one node for one edge type.
#[derive(Clone, Copy)]
pub struct AdjRun<'g> {
    graph: &'g HeteroGraph,
    csr: Option<&'g Csr>,
    edge_type: u16,
    start: usize,
    end: usize,
}

impl<'g> AdjRun<'g> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn get(&self, i: usize) -> EdgeView {
        let csr = self.csr.expect("non-empty run has a csr");
        let pos = self.start + i;
        let t = csr.dst_type[pos];
        let idx = csr.dst_index[pos];
        EdgeView {
            node: self.graph.node_at(t, idx),
            edge_type: self.edge_type,
            weight: csr.weight[pos],
            timestamp: csr.timestamp[pos],
        }
    }

    pub fn timestamps(&self) -> &'g [i64] {
        match self.csr {
            Some(c) => &c.timestamp[self.start..self.end],
            None => &[],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = EdgeView> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// The prefix of this run with timestamps strictly below `t`.
    pub fn before(&self, t: i64) -> AdjRun<'g> {
        let cut = self.timestamps().partition_point(|&ts| ts < t);
        AdjRun { end: self.start + cut, ..*self }
    }
}

/// The immutable heterogeneous graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeteroGraph {
    pub(crate) schema: Schema,
    pub(crate) nodes: BTreeMap<u16, NodeTable>,
    pub(crate) features: BTreeMap<u16, FeatureTable>,
    pub(crate) adjacency: BTreeMap<(u16, u16), Arc<Csr>>,
}

impl HeteroGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn node_types(&self) -> impl Iterator<Item = u16> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self, node_type: u16) -> usize {
        self.nodes.get(&node_type).map_or(0, |t| t.ids.len())
    }

    pub fn total_node_count(&self) -> usize {
        self.nodes.values().map(|t| t.ids.len()).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(|c| c.len()).sum()
    }

    /// Edge counts keyed by edge type.
    pub fn edge_counts(&self) -> BTreeMap<u16, usize> {
        let mut out = BTreeMap::new();
        for ((_, et), csr) in &self.adjacency {
            *out.entry(*et).or_insert(0) += csr.len();
        }
        out
    }

    pub fn node_counts(&self) -> BTreeMap<u16, usize> {
        self.nodes.iter().map(|(t, tab)| (*t, tab.ids.len())).collect()
    }

    pub fn resolve(&self, node_type: u16, node_id: u64) -> Option<NodeRef> {
        let table = self.nodes.get(&node_type)?;
        table.lookup.get(&node_id).map(|&i| NodeRef::new(node_type, node_id, i))
    }

    /// Fills in (or validates) the dense index of `node`.
    pub fn resolve_ref(&self, node: NodeRef) -> Result<NodeRef, GraphError> {
        if node.is_resolved() {
            if let Some(table) = self.nodes.get(&node.node_type) {
                if table.ids.get(node.index as usize) == Some(&node.node_id) {
                    return Ok(node);
                }
            }
        }
        self.resolve(node.node_type, node.node_id).ok_or(GraphError::UnknownNode(node))
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        self.resolve_ref(node).is_ok()
    }

    pub fn node_at(&self, node_type: u16, index: u32) -> NodeRef {
        let id = self.nodes[&node_type].ids[index as usize];
        NodeRef::new(node_type, id, index)
    }

    /// All nodes of one type in index (= id) order.
    pub fn nodes_of(&self, node_type: u16) -> impl Iterator<Item = NodeRef> + '_ {
        let ids: &[u64] = self.nodes.get(&node_type).map_or(&[], |t| &t.ids);
        ids.iter().enumerate().map(move |(i, id)| NodeRef::new(node_type, *id, i as u32))
    }

    /// All nodes, ordered by `(node_type, node_id)`.
    pub fn all_nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes.keys().flat_map(move |t| self.nodes_of(*t))
    }

    pub fn feature_dim(&self, node_type: u16) -> usize {
        self.features.get(&node_type).map_or(0, |f| f.dim)
    }

    pub fn feature_table(&self, node_type: u16) -> Option<&FeatureTable> {
        self.features.get(&node_type)
    }

    /// Features of a node, or `None` when the input carried no feature row.
    pub fn features(&self, node: NodeRef) -> Option<&[f64]> {
        let node = self.resolve_ref(node).ok()?;
        let table = self.features.get(&node.node_type)?;
        let idx = node.index as usize;
        table.is_present(idx).then(|| table.row(idx))
    }

    /// Edge types that have adjacency for sources of `node_type`.
    pub fn edge_types_from(&self, node_type: u16) -> impl Iterator<Item = u16> + '_ {
        self.adjacency.range((node_type, 0)..=(node_type, u16::MAX)).map(|((_, et), _)| *et)
    }

    pub fn csr(&self, src_type: u16, edge_type: u16) -> Option<&Csr> {
        self.adjacency.get(&(src_type, edge_type)).map(|c| c.as_ref())
    }

    /// Outgoing edges of `node` with the given edge type, sorted by timestamp.
    pub fn out_edges(&self, node: NodeRef, edge_type: u16) -> Result<AdjRun<'_>, GraphError> {
        let node = self.resolve_ref(node)?;
        let csr = self.adjacency.get(&(node.node_type, edge_type)).map(|c| c.as_ref());
        let (start, end) = csr.map_or((0, 0), |c| c.run(node.index as usize));
        Ok(AdjRun { graph: self, csr, edge_type, start, end })
    }

    /// All outgoing edges over every edge type, grouped by edge type
    /// (ascending) and by timestamp within a type.
    pub fn out_edges_all(&self, node: NodeRef) -> Result<Vec<EdgeView>, GraphError> {
        let node = self.resolve_ref(node)?;
        let mut out = Vec::new();
        for ((_, et), csr) in self.adjacency.range((node.node_type, 0)..=(node.node_type, u16::MAX)) {
            let (start, end) = csr.run(node.index as usize);
            let run = AdjRun { graph: self, csr: Some(csr), edge_type: *et, start, end };
            out.extend(run.iter());
        }
        Ok(out)
    }

    pub fn out_degree(&self, node: NodeRef, edge_types: &[u16]) -> Result<usize, GraphError> {
        let node = self.resolve_ref(node)?;
        Ok(edge_types
            .iter()
            .filter_map(|et| self.adjacency.get(&(node.node_type, *et)))
            .map(|c| {
                let (s, e) = c.run(node.index as usize);
                e - s
            })
            .sum())
    }

    pub fn out_degree_all(&self, node: NodeRef) -> Result<usize, GraphError> {
        let node = self.resolve_ref(node)?;
        Ok(self
            .adjacency
            .range((node.node_type, 0)..=(node.node_type, u16::MAX))
            .map(|(_, c)| {
                let (s, e) = c.run(node.index as usize);
                e - s
            })
            .sum())
    }

    /// Edges of `node` / `edge_type` with timestamp strictly below `t`.
    pub fn temporal_cut(&self, node: NodeRef, edge_type: u16, t: i64) -> Result<AdjRun<'_>, GraphError> {
        Ok(self.out_edges(node, edge_type)?.before(t))
    }

    /// Writes every edge in `edges.tsv` format, ordered by source, edge type
    /// and timestamp.
    pub fn dump_edges<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ((src_type, et), csr) in &self.adjacency {
            let ids = &self.nodes[src_type].ids;
            for (src_idx, src_id) in ids.iter().enumerate() {
                let (s, e) = csr.run(src_idx);
                for pos in s..e {
                    let dst = self.node_at(csr.dst_type[pos], csr.dst_index[pos]);
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        src_type, src_id, et, dst.node_type, dst.node_id, csr.weight[pos], csr.timestamp[pos]
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Writes every node that has features in `nodes.tsv` format.
    pub fn dump_nodes<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (t, table) in &self.nodes {
            let Some(features) = self.features.get(t) else { continue };
            for (i, id) in table.ids.iter().enumerate() {
                if !features.is_present(i) {
                    continue;
                }
                let row: Vec<String> = features.row(i).iter().map(|x| x.to_string()).collect();
                writeln!(out, "{}\t{}\t{}", t, id, row.join(","))?;
            }
        }
        Ok(())
    }

    /// Copy of the graph where only nodes accepted by `owns` keep their
    /// outgoing adjacency. Node tables and features are kept whole so dense
    /// indices agree with the unpartitioned graph.
    pub fn shard(&self, owns: impl Fn(NodeRef) -> bool) -> HeteroGraph {
        let mut adjacency = BTreeMap::new();
        for ((src_type, et), csr) in &self.adjacency {
            let ids = &self.nodes[src_type].ids;
            let mut out = Csr { offsets: vec![0], ..Csr::default() };
            for (i, id) in ids.iter().enumerate() {
                if owns(NodeRef::new(*src_type, *id, i as u32)) {
                    let (s, e) = csr.run(i);
                    out.dst_type.extend_from_slice(&csr.dst_type[s..e]);
                    out.dst_index.extend_from_slice(&csr.dst_index[s..e]);
                    out.weight.extend_from_slice(&csr.weight[s..e]);
                    out.timestamp.extend_from_slice(&csr.timestamp[s..e]);
                }
                out.offsets.push(out.dst_index.len());
            }
            adjacency.insert((*src_type, *et), Arc::new(out));
        }
        HeteroGraph {
            schema: self.schema.clone(),
            nodes: self.nodes.clone(),
            features: self.features.clone(),
            adjacency,
        }
    }

    /// New graph with one edge inserted, or its weight raised when an edge
    /// with the same `(src, edge_type, dst, timestamp)` exists. Only the
    /// affected CSR is copied; every other adjacency block is shared.
    pub fn with_edge_upserted(
        &self,
        src: NodeRef,
        edge_type: u16,
        dst: NodeRef,
        weight: f64,
        timestamp: i64,
    ) -> Result<HeteroGraph, GraphError> {
        let src = self.resolve_ref(src)?;
        let dst = self.resolve_ref(dst)?;
        let kind = self.schema.edge_kind(edge_type).ok_or(GraphError::UnknownEdgeType(edge_type))?;
        build::validate_weight(kind, weight).map_err(|r| GraphError::InvalidEdge(r.to_string()))?;

        let n = self.node_count(src.node_type);
        let mut csr = match self.adjacency.get(&(src.node_type, edge_type)) {
            Some(c) => (**c).clone(),
            None => Csr { offsets: vec![0; n + 1], ..Csr::default() },
        };
        let (s, e) = csr.run(src.index as usize);
        let existing = (s..e).find(|&p| {
            csr.timestamp[p] == timestamp && csr.dst_type[p] == dst.node_type && csr.dst_index[p] == dst.index
        });
        if let Some(p) = existing {
            csr.weight[p] = csr.weight[p].max(weight);
        } else {
            // Stable position: after every edge with ts <= timestamp whose
            // destination sorts before `dst`.
            let key = (timestamp, dst.node_type, dst.node_id);
            let rel = (s..e)
                .take_while(|&p| {
                    let other = self.node_at(csr.dst_type[p], csr.dst_index[p]);
                    (csr.timestamp[p], other.node_type, other.node_id) < key
                })
                .count();
            let pos = s + rel;
            csr.dst_type.insert(pos, dst.node_type);
            csr.dst_index.insert(pos, dst.index);
            csr.weight.insert(pos, weight);
            csr.timestamp.insert(pos, timestamp);
            for off in csr.offsets.iter_mut().skip(src.index as usize + 1) {
                *off += 1;
            }
        }
        let mut next = self.clone();
        next.adjacency.insert((src.node_type, edge_type), Arc::new(csr));
        Ok(next)
    }

    /// New graph with a batch of edges of one (possibly new) edge type
    /// merged in. Duplicate keys keep the larger weight.
    pub fn with_edges_added(
        &self,
        edge_type: u16,
        kind: EdgeKind,
        edges: &[(NodeRef, NodeRef, f64, i64)],
    ) -> Result<HeteroGraph, GraphError> {
        let mut schema = self.schema.clone();
        schema.register_edge_type(edge_type, kind)?;
        let mut rows: BTreeMap<u16, Vec<(u32, i64, u16, u64, u32, f64)>> = BTreeMap::new();
        for ((src_type, et), csr) in &self.adjacency {
            if *et != edge_type {
                continue;
            }
            for i in 0..self.node_count(*src_type) {
                let (s, e) = csr.run(i);
                for p in s..e {
                    let dst = self.node_at(csr.dst_type[p], csr.dst_index[p]);
                    rows.entry(*src_type).or_default().push((
                        i as u32,
                        csr.timestamp[p],
                        dst.node_type,
                        dst.node_id,
                        dst.index,
                        csr.weight[p],
                    ));
                }
            }
        }
        for (src, dst, w, ts) in edges {
            let src = self.resolve_ref(*src)?;
            let dst = self.resolve_ref(*dst)?;
            build::validate_weight(kind, *w).map_err(|r| GraphError::InvalidEdge(r.to_string()))?;
            rows.entry(src.node_type)
                .or_default()
                .push((src.index, *ts, dst.node_type, dst.node_id, dst.index, *w));
        }
        let mut next = self.clone();
        next.schema = schema;
        for (src_type, mut list) in rows {
            list.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)).then(b.5.total_cmp(&a.5)));
            list.dedup_by(|later, kept| (later.0, later.1, later.2, later.3) == (kept.0, kept.1, kept.2, kept.3));
            let csr = build::csr_from_sorted(self.node_count(src_type), list.iter().map(|r| (r.0, r.2, r.4, r.5, r.1)));
            next.adjacency.insert((src_type, edge_type), Arc::new(csr));
        }
        Ok(next)
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<(), String> {
        for ((src_type, et), csr) in &self.adjacency {
            let n = self.node_count(*src_type);
            if csr.offsets.len() != n + 1 {
                return Err(format!("({src_type},{et}): offsets length {} != {}", csr.offsets.len(), n + 1));
            }
            if csr.offsets.windows(2).any(|w| w[0] > w[1]) {
                return Err(format!("({src_type},{et}): offsets decrease"));
            }
            if csr.offsets.last() != Some(&csr.len()) {
                return Err(format!("({src_type},{et}): last offset != neighbor count"));
            }
            let kind = self.schema.edge_kind(*et).ok_or(format!("edge type {et} missing from schema"))?;
            for i in 0..n {
                let (s, e) = csr.run(i);
                if csr.timestamp[s..e].windows(2).any(|w| w[0] > w[1]) {
                    return Err(format!("({src_type},{et}) node {i}: timestamps not sorted"));
                }
            }
            for w in &csr.weight {
                let ok = match kind {
                    EdgeKind::Attribute => *w == 1.0,
                    _ => w.is_finite() && *w > 0.0,
                };
                if !ok {
                    return Err(format!("({src_type},{et}): bad {kind} weight {w}"));
                }
            }
        }
        Ok(())
    }
}

/// People-recommendation edge weight: shared connections normalised by the
/// geometric mean of both degrees.
pub fn connection_affinity_weight(common_count: usize, deg_u: usize, deg_v: usize) -> Result<f64, GraphError> {
    if deg_u == 0 || deg_v == 0 {
        return Err(GraphError::InvalidEdge("affinity weight undefined for zero degree".into()));
    }
    if common_count > deg_u.min(deg_v) {
        return Err(GraphError::InvalidEdge(format!(
            "common connections {common_count} exceed min degree {}",
            deg_u.min(deg_v)
        )));
    }
    Ok(common_count as f64 / (deg_u as f64 * deg_v as f64).sqrt())
}

#[cfg(test)]
mod tests;
