use std::collections::BTreeMap;
use std::sync::Arc;

use lignn_core::graph::{EdgeRow, GraphBuilder};
use lignn_core::model::{build_trees, Model, ModelConfig, Role};
use lignn_core::synthetic::{planted_bipartite, BipartiteConfig};
use lignn_core::{HeteroGraph, NodeRef};
use lignn_engine::nearline::{write_events, EventKind};
use lignn_engine::{EmbeddingStore, EpochGraph, InteractionEvent, NearlineConfig, NearlineRefresher};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn base() -> (Model, HeteroGraph) {
    let data = planted_bipartite(&BipartiteConfig {
        members: 50,
        items: 50,
        communities: 5,
        feature_dim: 4,
        seed: 9,
        ..BipartiteConfig::default()
    });
    let mut cfg = ModelConfig::new(BTreeMap::from([(0, 4), (1, 4)]), 6, 2);
    cfg.node_counts = data.graph.node_counts();
    cfg.id_embeddings = true;
    cfg.id_dim = 3;
    cfg.encoder = lignn_core::model::EncoderMode::Dual;
    (Model::new(cfg, 1).unwrap(), data.graph)
}

fn events(n: usize, seed: u64) -> Vec<InteractionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| InteractionEvent {
            // pairs of events share a timestamp so some repeat edges collapse
            ts_ms: 1_000_000 + (i / 2) as i64,
            kind: EventKind::ALL[rng.gen_range(0..4)],
            member: NodeRef::key(0, rng.gen_range(0..12)),
            item: NodeRef::key(1, rng.gen_range(0..12)),
        })
        .collect()
}

fn events_text(events: &[InteractionEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_events(events, &mut buf).unwrap();
    buf
}

fn refresher(model: &Model, graph: &HeteroGraph, store: Arc<EmbeddingStore>) -> NearlineRefresher {
    NearlineRefresher::new(model.clone(), Arc::new(EpochGraph::new(graph.clone())), store, NearlineConfig::ppr(2, 4)).unwrap()
}

/// Rebuilds the final graph from scratch: every original node and edge plus
/// both directions of every event.
fn rebuild(graph: &HeteroGraph, events: &[InteractionEvent]) -> HeteroGraph {
    let mut b = GraphBuilder::new(graph.schema().clone());
    for n in graph.all_nodes() {
        b.add_node(n.node_type, n.node_id, graph.features(n).unwrap().to_vec());
    }
    for n in graph.all_nodes() {
        for e in graph.out_edges_all(n).unwrap() {
            b.add_edge(EdgeRow {
                src_type: n.node_type,
                src_id: n.node_id,
                edge_type: e.edge_type,
                dst_type: e.node.node_type,
                dst_id: e.node.node_id,
                weight: e.weight,
                timestamp: e.timestamp,
            });
        }
    }
    for ev in events {
        let row = EdgeRow {
            src_type: ev.member.node_type,
            src_id: ev.member.node_id,
            edge_type: 1,
            dst_type: ev.item.node_type,
            dst_id: ev.item.node_id,
            weight: 1.0,
            timestamp: ev.ts_ms,
        };
        b.add_edge(row);
        b.add_edge(EdgeRow { src_type: row.dst_type, src_id: row.dst_id, dst_type: row.src_type, dst_id: row.src_id, ..row });
    }
    b.finish().0
}

#[test]
fn empty_stream_leaves_the_store_unchanged() {
    let (model, graph) = base();
    let store = Arc::new(EmbeddingStore::new());
    store.put(NodeRef::key(0, 1), vec![0.5; 6], 7);
    let before = store.dump_string();
    let mut r = refresher(&model, &graph, Arc::clone(&store));
    let report = r.run(&b""[..]).unwrap();
    assert_eq!(report.events, 0);
    assert_eq!(store.dump_string(), before);
    assert_eq!(r.graph().epoch(), 0);
}

#[test]
fn a_single_event_bumps_both_versions_once() {
    let (model, graph) = base();
    let store = Arc::new(EmbeddingStore::new());
    for n in graph.all_nodes() {
        store.put(n, vec![0.0; 6], 0);
    }
    let mut r = refresher(&model, &graph, Arc::clone(&store));
    let ev = events(1, 3)[0];
    let report = r.run(&events_text(&[ev])[..]).unwrap();
    assert_eq!(report.applied, 1);
    assert_eq!(report.settled, 0);
    for n in graph.all_nodes() {
        let expected = if n == ev.member || n == ev.item { 2 } else { 1 };
        assert_eq!(store.version(n), expected, "{n}");
    }
}

#[test]
fn replay_matches_offline_inference_on_the_final_graph() {
    let (model, graph) = base();
    let evs = events(100, 11);
    let store = Arc::new(EmbeddingStore::new());
    let mut r = refresher(&model, &graph, Arc::clone(&store));
    let report = r.run(&events_text(&evs)[..]).unwrap();
    assert_eq!(report.applied, 100);

    let final_graph = rebuild(&graph, &evs);
    assert_eq!(final_graph.edge_count(), r.graph().load().edge_count());
    let touched: std::collections::BTreeSet<NodeRef> = evs.iter().flat_map(|e| [e.member, e.item]).collect();
    assert_eq!(store.len(), touched.len());
    let spec = NearlineConfig::ppr(2, 4).tree;
    for n in touched {
        let root = final_graph.resolve_ref(n).unwrap();
        let tree = build_trees(&final_graph, &[root], &spec).0.pop().unwrap().unwrap();
        let role = if n.node_type == 0 { Role::Source } else { Role::Destination };
        let expected = model.embed_tree(role, &tree);
        let got = store.get(n).unwrap();
        let err = expected.iter().zip(&got.vector).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "{n}: {err}");
    }
}

#[test]
fn replay_is_deterministic() {
    let (model, graph) = base();
    let text = events_text(&events(100, 5));
    let dumps: Vec<String> = (0..2)
        .map(|_| {
            let store = Arc::new(EmbeddingStore::new());
            refresher(&model, &graph, Arc::clone(&store)).run(&text[..]).unwrap();
            store.dump_string()
        })
        .collect();
    assert!(!dumps[0].is_empty());
    assert_eq!(dumps[0], dumps[1]);
}
