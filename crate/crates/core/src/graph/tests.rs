use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const ENG: u16 = 1;
const AFF: u16 = 2;
const ATTR: u16 = 3;

fn schema() -> Schema {
    Schema::new()
        .with_edge_type(ENG, EdgeKind::Engagement)
        .with_edge_type(AFF, EdgeKind::Affinity)
        .with_edge_type(ATTR, EdgeKind::Attribute)
        .with_feature_dim(0, 2)
        .with_feature_dim(1, 2)
}

fn build(edges: &str, nodes: &str) -> (HeteroGraph, GraphBuildReport) {
    build_graph(Cursor::new(edges), Cursor::new(nodes), schema()).unwrap()
}

#[test]
fn minimal_graph() {
    let (g, report) = build("0\t1\t1\t1\t2\t0.7\t10\n", "0\t1\t1,2\n1\t2\t3,4\n");
    let src = g.resolve(0, 1).unwrap();
    assert_eq!(g.out_degree(src, &[ENG]).unwrap(), 1);
    let e = g.out_edges(src, ENG).unwrap().get(0);
    assert_eq!(e.weight, 0.7);
    assert_eq!(e.node, NodeRef::key(1, 2));
    assert_eq!(report.rejected_count(), 0);
    assert_eq!(g.features(src), Some(&[1.0, 2.0][..]));
    g.check_invariants().unwrap();
}

#[test]
fn attribute_weight_must_be_one() {
    let (g, report) = build("0\t1\t3\t1\t2\t2.0\t0\n0\t1\t3\t1\t3\t1.0\t0\n", "");
    assert_eq!(report.rejected_count(), 1);
    assert_eq!(report.rejected[0].line, 1);
    assert!(matches!(report.rejected[0].reason, RejectReason::AttributeWeight { .. }));
    assert_eq!(g.edge_count(), 1);
}

#[test]
fn malformed_and_unknown_rows_are_reported() {
    let edges = "# comment\n0\t1\t9\t1\t2\t1.0\t0\nnot a row\n0\t1\t1\t1\t2\t-1\t0\n0\t1\t1\t1\t2\t1\n";
    let (g, report) = build(edges, "0\t1\t1.0\n");
    let reasons: Vec<_> = report.rejected.iter().map(|r| (r.source, r.line)).collect();
    assert_eq!(
        reasons,
        vec![(RowSource::Nodes, 1), (RowSource::Edges, 2), (RowSource::Edges, 3), (RowSource::Edges, 4)]
    );
    // the six-field row is accepted with timestamp 0
    let n = g.resolve(0, 1).unwrap();
    assert_eq!(g.out_edges(n, ENG).unwrap().get(0).timestamp, 0);
}

#[test]
fn dedup_keeps_max_weight_against_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lines = Vec::new();
    for _ in 0..97 {
        loop {
            let line = format!(
                "0\t{}\t{}\t1\t{}\t{}\t{}",
                rng.gen_range(0..10),
                [ENG, AFF][rng.gen_range(0..2)],
                rng.gen_range(0..10),
                rng.gen_range(1..5) as f64 * 0.25,
                rng.gen_range(0..3) * 100
            );
            let key = |l: &str| {
                let f: Vec<&str> = l.split('\t').collect();
                (f[0].to_string(), f[1].to_string(), f[2].to_string(), f[3].to_string(), f[4].to_string(), f[6].to_string())
            };
            if lines.iter().all(|l: &String| key(l) != key(&line)) {
                lines.push(line);
                break;
            }
        }
    }
    // three duplicates of existing keys with a larger weight
    for i in [3usize, 40, 77] {
        let mut f: Vec<String> = lines[i].split('\t').map(str::to_string).collect();
        f[5] = "9.5".into();
        lines.push(f.join("\t"));
    }
    assert_eq!(lines.len(), 100);

    // oracle: sort-unique over the raw rows
    let oracle: BTreeSet<(String, String, String, String, String, String)> = lines
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].into(), f[1].into(), f[2].into(), f[3].into(), f[4].into(), f[6].into())
        })
        .collect();
    assert_eq!(oracle.len(), 97);

    let (g, report) = build(&lines.join("\n"), "");
    assert_eq!(g.edge_count(), 97);
    assert_eq!(report.duplicate_edges_collapsed, 3);
    assert_eq!(report.edge_counts.values().sum::<usize>(), 97);
    let max_weight = g.adjacency.values().flat_map(|c| c.weight.iter().copied()).fold(0.0, f64::max);
    assert_eq!(max_weight, 9.5);
    let nines = g.adjacency.values().flat_map(|c| c.weight.iter()).filter(|w| **w == 9.5).count();
    assert_eq!(nines, 3);
}

#[test]
fn out_degree_by_edge_type() {
    let edges = "0\t1\t1\t1\t1\t1\t0\n0\t1\t1\t1\t2\t1\t0\n0\t1\t1\t1\t3\t1\t0\n0\t1\t3\t1\t4\t1\t0\n0\t1\t3\t1\t5\t1\t0\n";
    let (g, _) = build(edges, "0\t2\t0,0\n");
    let n = g.resolve(0, 1).unwrap();
    assert_eq!(g.out_degree(n, &[ENG]).unwrap(), 3);
    assert_eq!(g.out_degree(n, &[ENG, ATTR]).unwrap(), 5);
    assert_eq!(g.out_degree_all(n).unwrap(), 5);
    let isolated = g.resolve(0, 2).unwrap();
    assert_eq!(g.out_degree_all(isolated).unwrap(), 0);
    assert!(matches!(g.out_degree(NodeRef::key(0, 99), &[ENG]), Err(GraphError::UnknownNode(_))));
}

#[test]
fn out_degree_matches_raw_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut raw = Vec::new();
    let mut seen = BTreeSet::new();
    while raw.len() < 300 {
        let (s, d, et) = (rng.gen_range(0..50u64), rng.gen_range(0..50u64), [ENG, AFF, ATTR][rng.gen_range(0..3)]);
        if seen.insert((s, d, et)) {
            raw.push((s, et, d));
        }
    }
    let text: String = raw.iter().map(|(s, et, d)| format!("0\t{s}\t{et}\t0\t{d}\t1\t0\n")).collect();
    let (g, _) = build(&text, "");
    let mut oracle: BTreeMap<(u64, u16), usize> = BTreeMap::new();
    for (s, et, _) in &raw {
        *oracle.entry((*s, *et)).or_default() += 1;
    }
    let mut total = 0;
    for node in g.nodes_of(0) {
        for et in [ENG, AFF, ATTR] {
            let d = g.out_degree(node, &[et]).unwrap();
            assert_eq!(d, oracle.get(&(node.node_id, et)).copied().unwrap_or(0));
            total += d;
        }
    }
    assert_eq!(total, g.edge_count());
}

#[test]
fn connection_affinity_weight_cases() {
    assert_eq!(connection_affinity_weight(7, 7, 7).unwrap(), 1.0);
    assert_eq!(connection_affinity_weight(0, 3, 5).unwrap(), 0.0);
    assert!((connection_affinity_weight(2, 4, 9).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(connection_affinity_weight(1, 0, 4).is_err());
    assert!(connection_affinity_weight(5, 4, 9).is_err());
}

proptest! {
    #[test]
    fn connection_affinity_symmetry_and_scaling(common in 0usize..20, du in 20usize..200, dv in 20usize..200, c in 1usize..5) {
        let a = connection_affinity_weight(common, du, dv).unwrap();
        let b = connection_affinity_weight(common, dv, du).unwrap();
        prop_assert_eq!(a, b);
        // degrees scaled by c² divide the weight by c²; with the shared
        // count scaled by c as well the net factor is 1/c
        let c2 = (c * c) as f64;
        let scaled = connection_affinity_weight(common, du * c * c, dv * c * c).unwrap();
        prop_assert!((scaled - a / c2).abs() <= 1e-14 * a.max(1e-300));
        let both = connection_affinity_weight(common * c, du * c * c, dv * c * c).unwrap();
        prop_assert!((both - a / c as f64).abs() <= 1e-14 * a.max(1e-300));
    }
}

fn timestamped(n: usize) -> (HeteroGraph, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ts: Vec<i64> = (0..n).map(|_| rng.gen_range(0..1_000_000)).collect();
    let text: String = ts.iter().enumerate().map(|(i, t)| format!("0\t1\t1\t1\t{i}\t1\t{t}\n")).collect();
    let (g, _) = build(&text, "");
    ts.sort_unstable();
    (g, ts)
}

#[test]
fn temporal_cut_cases() {
    let (g, ts) = timestamped(20);
    let n = g.resolve(0, 1).unwrap();
    assert!(g.temporal_cut(n, ENG, ts[0]).unwrap().is_empty());
    assert_eq!(g.temporal_cut(n, ENG, TS_INFINITY).unwrap().len(), 20);
    let median = ts[10];
    let linear = ts.iter().filter(|t| **t < median).count();
    assert_eq!(g.temporal_cut(n, ENG, median).unwrap().len(), linear);
}

proptest! {
    #[test]
    fn temporal_cut_is_monotone_prefix(t1 in 0i64..1_000_000, dt in 0i64..1_000_000) {
        let (g, _) = timestamped(40);
        let n = g.resolve(0, 1).unwrap();
        let a: Vec<EdgeView> = g.temporal_cut(n, ENG, t1).unwrap().iter().collect();
        let b: Vec<EdgeView> = g.temporal_cut(n, ENG, t1 + dt).unwrap().iter().collect();
        prop_assert!(a.len() <= b.len());
        prop_assert_eq!(&b[..a.len()], &a[..]);
        prop_assert!(a.iter().all(|e| e.timestamp < t1));
    }
}

fn random_edge_file(seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = String::new();
    for _ in 0..200 {
        let et = [ENG, AFF, ATTR][rng.gen_range(0..3)];
        let w = if et == ATTR { 1.0 } else { rng.gen_range(0.1..3.0) };
        edges.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            rng.gen_range(0..2),
            rng.gen_range(0..30),
            et,
            rng.gen_range(0..2),
            rng.gen_range(0..30),
            w,
            rng.gen_range(0..50)
        ));
    }
    let mut nodes = String::new();
    for t in 0..2 {
        for id in 0..30 {
            if rng.gen_bool(0.8) {
                nodes.push_str(&format!("{t}\t{id}\t{},{}\n", rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
    }
    (edges, nodes)
}

#[test]
fn dump_round_trip_is_identity() {
    let (edges, nodes) = random_edge_file(5);
    let (g, _) = build(&edges, &nodes);
    g.check_invariants().unwrap();
    let mut e = Vec::new();
    let mut n = Vec::new();
    g.dump_edges(&mut e).unwrap();
    g.dump_nodes(&mut n).unwrap();
    let (again, report) = build_graph(Cursor::new(e), Cursor::new(n), g.schema().clone()).unwrap();
    assert_eq!(report.rejected_count(), 0);
    assert_eq!(again, g);
}

#[test]
fn report_is_reproducible_and_order_independent() {
    let (edges, nodes) = random_edge_file(9);
    let (g1, r1) = build(&edges, &nodes);
    let (_, r2) = build(&edges, &nodes);
    assert_eq!(r1, r2);
    let mut shuffled: Vec<&str> = edges.lines().collect();
    shuffled.reverse();
    let (g3, _) = build(&shuffled.join("\n"), &nodes);
    assert_eq!(g1, g3);
}

#[test]
fn upsert_inserts_in_time_order_and_keeps_max() {
    let (g, _) = build("0\t1\t1\t1\t1\t1\t10\n0\t1\t1\t1\t2\t1\t30\n", "1\t3\t0,0\n");
    let src = g.resolve(0, 1).unwrap();
    let dst = g.resolve(1, 3).unwrap();
    let g2 = g.with_edge_upserted(src, ENG, dst, 2.0, 20).unwrap();
    let ts: Vec<i64> = g2.out_edges(src, ENG).unwrap().iter().map(|e| e.timestamp).collect();
    assert_eq!(ts, vec![10, 20, 30]);
    let g3 = g2.with_edge_upserted(src, ENG, dst, 1.5, 20).unwrap();
    assert_eq!(g3.out_edges(src, ENG).unwrap().get(1).weight, 2.0);
    assert_eq!(g3.edge_count(), 3);
    g3.check_invariants().unwrap();
    // original untouched
    assert_eq!(g.edge_count(), 2);
    assert!(g.with_edge_upserted(src, ATTR, dst, 2.0, 0).is_err());
}

#[test]
fn shard_keeps_indices_and_owned_adjacency() {
    let (edges, nodes) = random_edge_file(21);
    let (g, _) = build(&edges, &nodes);
    let shard = g.shard(|n| n.node_id % 2 == 0);
    shard.check_invariants().unwrap();
    for node in g.all_nodes() {
        let expected = if node.node_id % 2 == 0 { g.out_edges_all(node).unwrap() } else { vec![] };
        assert_eq!(shard.out_edges_all(node).unwrap(), expected);
        assert_eq!(shard.resolve(node.node_type, node.node_id).unwrap().index, node.index);
    }
}
