//! Cold-start densification: artificial edges from low out-degree nodes to
//! their most similar high out-degree nodes under external embeddings.

use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{EdgeKind, GraphError, HeteroGraph, NodeRef};

#[derive(Debug, Error)]
pub enum DensifyError {
    #[error("quantile {0} outside [0, 1]")]
    Quantile(f64),
    #[error("lower quantile {lower} must be below upper quantile {upper}")]
    QuantileOrder { lower: f64, upper: f64 },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("no covered high-degree node to connect to")]
    EmptyHighSet,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensifyConfig {
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub k: usize,
    /// Edge type of the artificial edges (registered as attribute kind).
    pub edge_type: u16,
    /// Edge types counted for out-degree; all when `None`.
    pub degree_edge_types: Option<Vec<u16>>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self { lower_quantile: 0.30, upper_quantile: 0.90, k: 50, edge_type: 100, degree_edge_types: None }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<(), DensifyError> {
        for q in [self.lower_quantile, self.upper_quantile] {
            if !(0.0..=1.0).contains(&q) {
                return Err(DensifyError::Quantile(q));
            }
        }
        if self.lower_quantile >= self.upper_quantile {
            return Err(DensifyError::QuantileOrder { lower: self.lower_quantile, upper: self.upper_quantile });
        }
        if self.k == 0 {
            return Err(DensifyError::ZeroK);
        }
        Ok(())
    }
}

/// External content embeddings keyed by node.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<NodeRef, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, node: NodeRef, vector: Vec<f64>) -> Result<(), DensifyError> {
        if vector.len() != self.dim {
            return Err(DensifyError::Dimension { expected: self.dim, got: vector.len() });
        }
        if let Some(x) = vector.iter().find(|x| !x.is_finite()) {
            return Err(DensifyError::Parse { line: 0, message: format!("non-finite entry {x}") });
        }
        self.vectors.insert(NodeRef::key(node.node_type, node.node_id), vector);
        Ok(())
    }

    pub fn get(&self, node: NodeRef) -> Option<&[f64]> {
        self.vectors.get(&node).map(|v| v.as_slice())
    }

    /// Reads `node_type<TAB>node_id<TAB>e1,e2,...`; the first row fixes the
    /// dimension.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, DensifyError> {
        let mut table = EmbeddingTable::new(0);
        let mut first = true;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| DensifyError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            }
            let node_type: u16 = fields[0].parse().map_err(|e| err(format!("node_type: {e}")))?;
            let node_id: u64 = fields[1].parse().map_err(|e| err(format!("node_id: {e}")))?;
            let vector = fields[2]
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(format!("vector: {e}")))?;
            if first {
                table.dim = vector.len();
                first = false;
            }
            table.insert(NodeRef::key(node_type, node_id), vector).map_err(|e| err(e.to_string()))?;
        }
        Ok(table)
    }
}

fn out_degree(graph: &HeteroGraph, node: NodeRef, edge_types: Option<&[u16]>) -> usize {
    match edge_types {
        Some(types) => graph.out_degree(node, types),
        None => graph.out_degree_all(node),
    }
    .expect("node taken from graph")
}

/// Nearest-rank quantile of the out-degree distribution over all nodes.
pub fn degree_threshold(graph: &HeteroGraph, quantile: f64, edge_types: Option<&[u16]>) -> Result<usize, DensifyError> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(DensifyError::Quantile(quantile));
    }
    let mut degrees: Vec<usize> = graph.all_nodes().map(|n| out_degree(graph, n, edge_types)).collect();
    if degrees.is_empty() {
        return Err(DensifyError::EmptyGraph);
    }
    degrees.sort_unstable();
    Ok(degrees[nearest_rank(quantile, degrees.len()) - 1])
}

/// 1-based rank `ceil(q·n)`, at least 1. The small slack keeps exact
/// products such as 0.9·100 from rounding up a rank.
fn nearest_rank(q: f64, n: usize) -> usize {
    ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Brute-force cosine top-k among `candidates`. Candidates without an
/// embedding or with zero norm are skipped; ties go to the smaller
/// `(node_type, node_id)`.
pub fn exact_knn(
    table: &EmbeddingTable,
    candidates: &[NodeRef],
    query: &[f64],
    k: usize,
) -> Result<Vec<(NodeRef, f64)>, DensifyError> {
    if query.len() != table.dim {
        return Err(DensifyError::Dimension { expected: table.dim, got: query.len() });
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(DensifyError::ZeroQuery);
    }
    let mut scored: Vec<(NodeRef, f64)> = candidates
        .iter()
        .filter_map(|c| {
            let v = table.get(*c)?;
            let vn = norm(v);
            (vn > 0.0).then(|| (*c, query.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn)))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SkipReason {
    NoEmbedding,
    ZeroNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedNode {
    pub node_type: u16,
    pub node_id: u64,
    pub role: &'static str,
    pub reason: SkipReason,
}

#[derive(Clone, Debug)]
pub struct DensifyOutput {
    /// `(low, high, similarity)`, sorted by low node then rank.
    pub edges: Vec<(NodeRef, NodeRef, f64)>,
    pub graph: HeteroGraph,
    pub skipped: Vec<SkippedNode>,
    pub low_threshold: usize,
    pub high_threshold: usize,
    pub low_count: usize,
    pub high_count: usize,
}

/// Adds `min(k, |covered high set|)` artificial weight-1.0 edges from every
/// covered low-degree node to its cosine nearest high-degree nodes. A node
/// never links to itself.
pub fn densify(graph: &HeteroGraph, table: &EmbeddingTable, config: &DensifyConfig) -> Result<DensifyOutput, DensifyError> {
    config.validate()?;
    let types = config.degree_edge_types.as_deref();
    let low_threshold = degree_threshold(graph, config.lower_quantile, types)?;
    let high_threshold = degree_threshold(graph, config.upper_quantile, types)?;

    let mut low = Vec::new();
    let mut high = Vec::new();
    for n in graph.all_nodes() {
        let d = out_degree(graph, n, types);
        if d <= low_threshold {
            low.push(n);
        }
        if d >= high_threshold {
            high.push(n);
        }
    }

    let mut skipped = Vec::new();
    let mut skip = |n: NodeRef, role: &'static str, reason| {
        skipped.push(SkippedNode { node_type: n.node_type, node_id: n.node_id, role, reason })
    };
    let mut covered_high = Vec::new();
    for n in &high {
        match table.get(*n) {
            None => skip(*n, "high", SkipReason::NoEmbedding),
            Some(v) if norm(v) == 0.0 => skip(*n, "high", SkipReason::ZeroNorm),
            Some(_) => covered_high.push(*n),
        }
    }
    if covered_high.is_empty() {
        return Err(DensifyError::EmptyHighSet);
    }
    let mut covered_low = Vec::new();
    for n in &low {
        match table.get(*n) {
            None => skip(*n, "low", SkipReason::NoEmbedding),
            Some(v) if norm(v) == 0.0 => skip(*n, "low", SkipReason::ZeroNorm),
            Some(_) => covered_low.push(*n),
        }
    }

    let per_node: Vec<Vec<(NodeRef, NodeRef, f64)>> = covered_low
        .par_iter()
        .map(|n| {
            let candidates: Vec<NodeRef> = covered_high.iter().copied().filter(|h| h != n).collect();
            let top = exact_knn(table, &candidates, table.get(*n).expect("covered"), config.k)?;
            Ok(top.into_iter().map(|(h, s)| (*n, h, s)).collect())
        })
        .collect::<Result<_, DensifyError>>()?;
    let edges: Vec<(NodeRef, NodeRef, f64)> = per_node.into_iter().flatten().collect();

    let rows: Vec<(NodeRef, NodeRef, f64, i64)> = edges.iter().map(|(l, h, _)| (*l, *h, 1.0, 0)).collect();
    let densified = graph.with_edges_added(config.edge_type, EdgeKind::Attribute, &rows)?;
    Ok(DensifyOutput {
        edges,
        graph: densified,
        skipped,
        low_threshold,
        high_threshold,
        low_count: low.len(),
        high_count: high.len(),
    })
}
