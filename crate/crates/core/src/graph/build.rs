use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::sync::Arc;

use serde::Serialize;

use super::{Csr, EdgeKind, FeatureTable, GraphError, HeteroGraph, NodeTable, Schema};

/// One parsed `edges.tsv` line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeRow {
    pub src_type: u16,
    pub src_id: u64,
    pub edge_type: u16,
    pub dst_type: u16,
    pub dst_id: u64,
    pub weight: f64,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Edges,
    Nodes,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Malformed { detail: String },
    UnknownEdgeType { edge_type: u16 },
    AttributeWeight { weight: f64 },
    NonPositiveWeight { weight: f64 },
    FeatureDim { expected: usize, found: usize },
    NonFiniteFeature,
    DuplicateNode,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed { detail } => write!(f, "malformed row: {detail}"),
            RejectReason::UnknownEdgeType { edge_type } => write!(f, "unknown edge type {edge_type}"),
            RejectReason::AttributeWeight { weight } => write!(f, "attribute edge with weight {weight} (must be 1.0)"),
            RejectReason::NonPositiveWeight { weight } => write!(f, "weight {weight} is not finite and positive"),
            RejectReason::FeatureDim { expected, found } => {
                write!(f, "feature dimension {found}, expected {expected}")
            }
            RejectReason::NonFiniteFeature => write!(f, "non-finite feature value"),
            RejectReason::DuplicateNode => write!(f, "duplicate node row"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedRow {
    pub source: RowSource,
    /// 1-based line number in the source file (0 for programmatic rows).
    pub line: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
}

/// Summary of a graph build.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GraphBuildReport {
    pub node_counts: BTreeMap<u16, usize>,
    pub edge_counts: BTreeMap<u16, usize>,
    pub duplicate_edges_collapsed: usize,
    pub nodes_without_features: usize,
    pub rejected: Vec<RejectedRow>,
}

impl GraphBuildReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

pub(crate) fn validate_weight(kind: EdgeKind, weight: f64) -> Result<(), RejectReason> {
    match kind {
        EdgeKind::Attribute if weight != 1.0 => Err(RejectReason::AttributeWeight { weight }),
        _ if !(weight.is_finite() && weight > 0.0) => Err(RejectReason::NonPositiveWeight { weight }),
        _ => Ok(()),
    }
}

/// Builds a CSR from rows sorted by (src index, timestamp, dst type, dst id).
/// Each row is `(src_index, dst_type, dst_index, weight, timestamp)`.
pub(crate) fn csr_from_sorted(node_count: usize, rows: impl Iterator<Item = (u32, u16, u32, f64, i64)>) -> Csr {
    let mut csr = Csr { offsets: vec![0; node_count + 1], ..Csr::default() };
    for (src, dst_type, dst_index, weight, ts) in rows {
        csr.offsets[src as usize + 1] += 1;
        csr.dst_type.push(dst_type);
        csr.dst_index.push(dst_index);
        csr.weight.push(weight);
        csr.timestamp.push(ts);
    }
    for i in 0..node_count {
        csr.offsets[i + 1] += csr.offsets[i];
    }
    csr
}

/// Incremental graph construction. Rows that violate the schema are
/// recorded in the report instead of failing the build.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    schema: Schema,
    node_features: BTreeMap<u16, BTreeMap<u64, Option<Vec<f64>>>>,
    edges: Vec<EdgeRow>,
    rejected: Vec<RejectedRow>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        Self { schema, ..Self::default() }
    }

    fn reject(&mut self, source: RowSource, line: usize, reason: RejectReason) {
        self.rejected.push(RejectedRow { source, line, reason });
    }

    fn touch_node(&mut self, node_type: u16, node_id: u64) {
        self.node_features.entry(node_type).or_default().entry(node_id).or_insert(None);
    }

    /// Declares a node (with features). Returns `false` if the row was rejected.
    pub fn add_node(&mut self, node_type: u16, node_id: u64, features: Vec<f64>) -> bool {
        self.add_node_at(0, node_type, node_id, features)
    }

    fn add_node_at(&mut self, line: usize, node_type: u16, node_id: u64, features: Vec<f64>) -> bool {
        let expected = match self.schema.feature_dim(node_type) {
            Some(d) => d,
            None => {
                self.schema.set_feature_dim(node_type, features.len());
                features.len()
            }
        };
        if features.len() != expected {
            self.reject(RowSource::Nodes, line, RejectReason::FeatureDim { expected, found: features.len() });
            return false;
        }
        if features.iter().any(|x| !x.is_finite()) {
            self.reject(RowSource::Nodes, line, RejectReason::NonFiniteFeature);
            return false;
        }
        let slot = self.node_features.entry(node_type).or_default().entry(node_id).or_insert(None);
        if slot.is_some() {
            self.reject(RowSource::Nodes, line, RejectReason::DuplicateNode);
            return false;
        }
        *slot = Some(features);
        true
    }

    /// Adds an edge. Returns `false` if the row was rejected.
    pub fn add_edge(&mut self, row: EdgeRow) -> bool {
        self.add_edge_at(0, row)
    }

    fn add_edge_at(&mut self, line: usize, row: EdgeRow) -> bool {
        let Some(kind) = self.schema.edge_kind(row.edge_type) else {
            self.reject(RowSource::Edges, line, RejectReason::UnknownEdgeType { edge_type: row.edge_type });
            return false;
        };
        if let Err(reason) = validate_weight(kind, row.weight) {
            self.reject(RowSource::Edges, line, reason);
            return false;
        }
        self.touch_node(row.src_type, row.src_id);
        self.touch_node(row.dst_type, row.dst_id);
        self.edges.push(row);
        true
    }

    pub fn read_edges<R: BufRead>(&mut self, reader: R) -> Result<(), GraphError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim_end_matches('\r');
            if text.trim().is_empty() || text.trim_start().starts_with('#') {
                continue;
            }
            match parse_edge_line(text) {
                Ok(row) => {
                    self.add_edge_at(i + 1, row);
                }
                Err(detail) => self.reject(RowSource::Edges, i + 1, RejectReason::Malformed { detail }),
            }
        }
        Ok(())
    }

    pub fn read_nodes<R: BufRead>(&mut self, reader: R) -> Result<(), GraphError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim_end_matches('\r');
            if text.trim().is_empty() || text.trim_start().starts_with('#') {
                continue;
            }
            match parse_node_line(text) {
                Ok((t, id, features)) => {
                    self.add_node_at(i + 1, t, id, features);
                }
                Err(detail) => self.reject(RowSource::Nodes, i + 1, RejectReason::Malformed { detail }),
            }
        }
        Ok(())
    }

    pub fn finish(self) -> (HeteroGraph, GraphBuildReport) {
        let GraphBuilder { mut schema, node_features, edges, rejected } = self;

        let mut nodes = BTreeMap::new();
        let mut features = BTreeMap::new();
        let mut missing = 0;
        for (t, rows) in &node_features {
            let ids: Vec<u64> = rows.keys().copied().collect();
            let dim = schema.feature_dim(*t).unwrap_or(0);
            schema.set_feature_dim(*t, dim);
            let mut table = FeatureTable { dim, data: vec![0.0; dim * ids.len()], present: vec![false; ids.len()] };
            for (i, f) in rows.values().enumerate() {
                match f {
                    Some(f) => {
                        table.data[i * dim..(i + 1) * dim].copy_from_slice(f);
                        table.present[i] = true;
                    }
                    None => missing += 1,
                }
            }
            nodes.insert(*t, NodeTable::from_sorted(ids));
            features.insert(*t, table);
        }

        // Collapse duplicate (src, edge_type, dst, timestamp), keeping the max weight.
        let mut keyed: Vec<EdgeRow> = edges;
        keyed.sort_by(|a, b| {
            (a.src_type, a.edge_type, a.src_id, a.timestamp, a.dst_type, a.dst_id)
                .cmp(&(b.src_type, b.edge_type, b.src_id, b.timestamp, b.dst_type, b.dst_id))
                .then(b.weight.total_cmp(&a.weight))
        });
        let before = keyed.len();
        keyed.dedup_by(|later, kept| {
            (later.src_type, later.edge_type, later.src_id, later.timestamp, later.dst_type, later.dst_id)
                == (kept.src_type, kept.edge_type, kept.src_id, kept.timestamp, kept.dst_type, kept.dst_id)
        });
        let duplicates = before - keyed.len();

        let mut adjacency = BTreeMap::new();
        let mut edge_counts = BTreeMap::new();
        let mut start = 0;
        while start < keyed.len() {
            let (st, et) = (keyed[start].src_type, keyed[start].edge_type);
            let end = start + keyed[start..].iter().take_while(|r| r.src_type == st && r.edge_type == et).count();
            let src_table: &NodeTable = &nodes[&st];
            let rows = keyed[start..end].iter().map(|r| {
                let dst_table: &NodeTable = &nodes[&r.dst_type];
                (src_table.lookup[&r.src_id], r.dst_type, dst_table.lookup[&r.dst_id], r.weight, r.timestamp)
            });
            adjacency.insert((st, et), Arc::new(csr_from_sorted(src_table.ids.len(), rows)));
            *edge_counts.entry(et).or_insert(0) += end - start;
            start = end;
        }

        let graph = HeteroGraph { schema, nodes, features, adjacency };
        let report = GraphBuildReport {
            node_counts: graph.node_counts(),
            edge_counts,
            duplicate_edges_collapsed: duplicates,
            nodes_without_features: missing,
            rejected,
        };
        (graph, report)
    }
}

fn parse_edge_line(line: &str) -> Result<EdgeRow, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 && fields.len() != 7 {
        return Err(format!("expected 7 tab-separated fields, found {}", fields.len()));
    }
    let num = |i: usize, name: &str| -> Result<u64, String> {
        fields[i].trim().parse::<u64>().map_err(|_| format!("bad {name} `{}`", fields[i]))
    };
    let small = |i: usize, name: &str| -> Result<u16, String> {
        fields[i].trim().parse::<u16>().map_err(|_| format!("bad {name} `{}`", fields[i]))
    };
    let weight: f64 = fields[5].trim().parse().map_err(|_| format!("bad weight `{}`", fields[5]))?;
    let timestamp = match fields.get(6).map(|s| s.trim()) {
        None | Some("") => 0,
        Some(s) => s.parse::<i64>().map_err(|_| format!("bad timestamp `{s}`"))?,
    };
    Ok(EdgeRow {
        src_type: small(0, "src_type")?,
        src_id: num(1, "src_id")?,
        edge_type: small(2, "edge_type")?,
        dst_type: small(3, "dst_type")?,
        dst_id: num(4, "dst_id")?,
        weight,
        timestamp,
    })
}

fn parse_node_line(line: &str) -> Result<(u16, u64, Vec<f64>), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 && fields.len() != 2 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let t: u16 = fields[0].trim().parse().map_err(|_| format!("bad node_type `{}`", fields[0]))?;
    let id: u64 = fields[1].trim().parse().map_err(|_| format!("bad node_id `{}`", fields[1]))?;
    let features = match fields.get(2).map(|s| s.trim()) {
        None | Some("") => Vec::new(),
        Some(s) => s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad feature `{x}`")))
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok((t, id, features))
}

/// Parses `edges.tsv` and `nodes.tsv` streams into a graph.
///
/// I/O failures are fatal; rows that break the schema are counted in the
/// report and skipped.
pub fn build_graph<E: BufRead, N: BufRead>(
    edges: E,
    nodes: N,
    schema: Schema,
) -> Result<(HeteroGraph, GraphBuildReport), GraphError> {
    let mut builder = GraphBuilder::new(schema);
    builder.read_nodes(nodes)?;
    builder.read_edges(edges)?;
    Ok(builder.finish())
}
