use super::SampleError;
use crate::graph::{HeteroGraph, NodeRef};

/// The `n` most recent `edge_type` edges of `node` with timestamp `< t`, in
/// ascending time order. `usize::MAX` and `TS_INFINITY` act as "no limit".
pub fn sample_temporal_last_n(
    graph: &HeteroGraph,
    node: NodeRef,
    edge_type: u16,
    t: i64,
    n: usize,
) -> Result<Vec<(NodeRef, i64)>, SampleError> {
    if n == 0 {
        return Err(SampleError::InvalidConfig("n must be at least 1".into()));
    }
    let cut = graph.temporal_cut(node, edge_type, t)?;
    let start = cut.len().saturating_sub(n);
    Ok((start..cut.len()).map(|i| cut.get(i)).map(|e| (e.node, e.timestamp)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TS_INFINITY;
    use crate::samplers::test_graphs::*;

    fn timeline(count: u64) -> HeteroGraph {
        let edges: Vec<_> = (1..=count).map(|i| edge(0, ENGAGE, i, 1.0, (i * 10) as i64)).collect();
        from_edges(count + 1, &edges)
    }

    #[test]
    fn fewer_events_than_n() {
        let g = timeline(3);
        let s = g.resolve(0, 0).unwrap();
        let out = sample_temporal_last_n(&g, s, ENGAGE, TS_INFINITY, 10).unwrap();
        assert_eq!(out.iter().map(|(_, t)| *t).collect::<Vec<_>>(), vec![10, 20, 30]);
    }

    #[test]
    fn before_first_event_is_empty() {
        let g = timeline(3);
        let s = g.resolve(0, 0).unwrap();
        assert!(sample_temporal_last_n(&g, s, ENGAGE, 10, 5).unwrap().is_empty());
    }

    #[test]
    fn last_ten_before_seventieth_matches_linear_scan() {
        let g = timeline(100);
        let s = g.resolve(0, 0).unwrap();
        let all: Vec<(NodeRef, i64)> = g.out_edges_all(s).unwrap().iter().map(|e| (e.node, e.timestamp)).collect();
        let t = all[69].1;
        let mut oracle: Vec<(NodeRef, i64)> = all.iter().copied().filter(|(_, ts)| *ts < t).collect();
        oracle.sort_by_key(|(_, ts)| *ts);
        let oracle = oracle[oracle.len() - 10..].to_vec();
        let got = sample_temporal_last_n(&g, s, ENGAGE, t, 10).unwrap();
        assert_eq!(got, oracle);
        assert_eq!(got.first().unwrap().1, all[59].1);
    }

    #[test]
    fn unlimited_returns_full_adjacency() {
        let g = timeline(25);
        let s = g.resolve(0, 0).unwrap();
        assert_eq!(sample_temporal_last_n(&g, s, ENGAGE, TS_INFINITY, usize::MAX).unwrap().len(), 25);
    }

    #[test]
    fn unknown_node_errors() {
        let g = timeline(2);
        assert_eq!(
            sample_temporal_last_n(&g, NodeRef::key(0, 99), ENGAGE, TS_INFINITY, 1),
            Err(SampleError::UnknownNode(NodeRef::key(0, 99)))
        );
    }
}
