//! Small fixtures shared by sampler tests.

use crate::graph::{EdgeKind, EdgeRow, GraphBuilder, HeteroGraph, Schema};

pub const ENGAGE: u16 = 1;
pub const AFFINITY: u16 = 2;

fn schema() -> Schema {
    Schema::new()
        .with_edge_type(ENGAGE, EdgeKind::Engagement)
        .with_edge_type(AFFINITY, EdgeKind::Affinity)
        .with_feature_dim(0, 0)
}

pub fn edge(src: u64, et: u16, dst: u64, weight: f64, timestamp: i64) -> EdgeRow {
    EdgeRow { src_type: 0, src_id: src, edge_type: et, dst_type: 0, dst_id: dst, weight, timestamp }
}

pub fn from_edges(nodes: u64, edges: &[EdgeRow]) -> HeteroGraph {
    let mut b = GraphBuilder::new(schema());
    for id in 0..nodes {
        b.add_node(0, id, vec![]);
    }
    for e in edges {
        assert!(b.add_edge(*e));
    }
    b.finish().0
}

/// Node 0 points at leaves 1..=L.
pub fn star(leaves: usize) -> HeteroGraph {
    let edges: Vec<EdgeRow> = (1..=leaves as u64).map(|l| edge(0, ENGAGE, l, 1.0, 0)).collect();
    from_edges(leaves as u64 + 1, &edges)
}

pub fn two_leaf_weighted(w_engage: f64, w_affinity: f64) -> HeteroGraph {
    from_edges(3, &[edge(0, ENGAGE, 1, w_engage, 0), edge(0, AFFINITY, 2, w_affinity, 0)])
}

pub fn two_leaf_same_type(w1: f64, w2: f64) -> HeteroGraph {
    from_edges(3, &[edge(0, ENGAGE, 1, w1, 0), edge(0, ENGAGE, 2, w2, 0)])
}

pub fn random_graph(n: usize, avg_degree: usize, seed: u64, symmetric: bool) -> HeteroGraph {
    crate::synthetic::random_weighted_graph(n, avg_degree, seed, symmetric)
}
