//! Seeded synthetic graphs and datasets for tests, benchmarks and the CLI.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::densify::EmbeddingTable;
use crate::graph::{EdgeKind, EdgeRow, GraphBuilder, HeteroGraph, NodeRef, Schema};
use crate::pipeline::TrainingRecord;

/// Single node type 0; edge type 1 (engagement) with weights in [0.1, 2).
/// Every node gets `avg_degree` random out-edges (self-loops skipped);
/// `symmetric` mirrors each edge with the same weight.
pub fn random_weighted_graph(n: usize, avg_degree: usize, seed: u64, symmetric: bool) -> HeteroGraph {
    let schema = Schema::new()
        .with_edge_type(1, EdgeKind::Engagement)
        .with_edge_type(2, EdgeKind::Affinity)
        .with_feature_dim(0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(schema);
    for id in 0..n as u64 {
        b.add_node(0, id, vec![]);
    }
    for src in 0..n as u64 {
        for _ in 0..avg_degree {
            let dst = rng.gen_range(0..n as u64);
            if dst == src {
                continue;
            }
            let weight = rng.gen_range(0.1..2.0);
            let row = EdgeRow { src_type: 0, src_id: src, edge_type: 1, dst_type: 0, dst_id: dst, weight, timestamp: 0 };
            b.add_edge(row);
            if symmetric {
                b.add_edge(EdgeRow { src_id: dst, dst_id: src, ..row });
            }
        }
    }
    b.finish().0
}

/// A graph plus labelled train and validation records.
#[derive(Clone, Debug)]
pub struct LinkDataset {
    pub graph: HeteroGraph,
    pub train: Vec<TrainingRecord>,
    pub validation: Vec<TrainingRecord>,
}

/// Members (type 0) and items (type 1) split into planted communities.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteConfig {
    pub members: usize,
    pub items: usize,
    pub communities: usize,
    pub interactions_per_member: usize,
    /// Probability that an interaction stays inside the member's community.
    pub p_in: f64,
    pub feature_dim: usize,
    /// Scale of the community signal in node features (noise has scale 1).
    pub feature_signal: f64,
    /// Fraction of each member's interactions stored as graph edges; the
    /// rest only appear as labelled records.
    pub edge_fraction: f64,
    /// Fraction of each member's interactions held out for validation.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for BipartiteConfig {
    fn default() -> Self {
        Self {
            members: 2000,
            items: 2000,
            communities: 10,
            interactions_per_member: 12,
            p_in: 0.9,
            feature_dim: 10,
            feature_signal: 1.5,
            edge_fraction: 0.5,
            holdout: 0.2,
            seed: 0,
        }
    }
}

fn noisy_onehot(rng: &mut ChaCha8Rng, community: usize, dim: usize, signal: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|k| normal.sample(rng) + if k == community % dim { signal } else { 0.0 }).collect()
}

fn engagement_schema() -> Schema {
    Schema::new().with_edge_type(1, EdgeKind::Engagement).with_edge_type(2, EdgeKind::Affinity)
}

fn add_interaction(b: &mut GraphBuilder, member: u64, item: u64, ts: i64) {
    let row = EdgeRow { src_type: 0, src_id: member, edge_type: 1, dst_type: 1, dst_id: item, weight: 1.0, timestamp: ts };
    b.add_edge(row);
    b.add_edge(EdgeRow { src_type: 1, src_id: item, dst_type: 0, dst_id: member, ..row });
}

/// Planted-community bipartite interaction graph. Held-out interactions are
/// validation positives and are absent from the graph; every positive is
/// paired with one negative to a uniformly random item.
pub fn planted_bipartite(cfg: &BipartiteConfig) -> LinkDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let community_of_item = |i: usize| i % cfg.communities;
    let mut b = GraphBuilder::new(engagement_schema());
    for m in 0..cfg.members {
        b.add_node(0, m as u64, noisy_onehot(&mut rng, m % cfg.communities, cfg.feature_dim, cfg.feature_signal));
    }
    for i in 0..cfg.items {
        b.add_node(1, i as u64, noisy_onehot(&mut rng, community_of_item(i), cfg.feature_dim, cfg.feature_signal));
    }
    let per_community = cfg.items.div_ceil(cfg.communities);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut ts = 0i64;
    for m in 0..cfg.members {
        let c = m % cfg.communities;
        for k in 0..cfg.interactions_per_member {
            ts += 1;
            let item = if rng.gen::<f64>() < cfg.p_in {
                loop {
                    let i = c + cfg.communities * rng.gen_range(0..per_community);
                    if i < cfg.items {
                        break i;
                    }
                }
            } else {
                rng.gen_range(0..cfg.items)
            };
            let negative = rng.gen_range(0..cfg.items);
            let n = cfg.interactions_per_member as f64;
            let as_edge = (k as f64) < n * cfg.edge_fraction;
            let held_out = (k as f64) >= n * (1.0 - cfg.holdout);
            let rec = |item: usize, label: f64| TrainingRecord {
                member: NodeRef::key(0, m as u64),
                item: NodeRef::key(1, item as u64),
                label,
                timestamp: ts,
            };
            if as_edge {
                add_interaction(&mut b, m as u64, item as u64, ts);
            } else if held_out {
                validation.push(rec(item, 1.0));
                validation.push(rec(negative, 0.0));
            } else {
                train.push(rec(item, 1.0));
                train.push(rec(negative, 0.0));
            }
        }
    }
    LinkDataset { graph: b.finish().0, train, validation }
}

/// `count` records whose member activity follows a Zipf law: member `k`
/// (1-based rank) is drawn with probability proportional to `k^-exponent`.
pub fn power_law_records(count: usize, members: usize, items: usize, exponent: f64, seed: u64) -> Vec<TrainingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=members).map(|k| (k as f64).powf(-exponent)).collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    (0..count)
        .map(|t| TrainingRecord {
            member: NodeRef::key(0, dist.sample(&mut rng) as u64),
            item: NodeRef::key(1, rng.gen_range(0..items as u64)),
            label: f64::from(u8::from(rng.gen::<bool>())),
            timestamp: t as i64,
        })
        .collect()
}

/// Members whose interest drifts between item communities over time.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalDatasetConfig {
    pub members: usize,
    pub items: usize,
    pub communities: usize,
    /// Interactions per member, in time order.
    pub history: usize,
    /// Expected run length inside one community before switching.
    pub run_length: usize,
    pub feature_dim: usize,
    pub feature_signal: f64,
    /// Trailing interactions per member used as training records.
    pub train_tail: usize,
    pub seed: u64,
}

impl Default for TemporalDatasetConfig {
    fn default() -> Self {
        Self {
            members: 300,
            items: 300,
            communities: 6,
            history: 24,
            run_length: 6,
            feature_dim: 6,
            feature_signal: 2.0,
            train_tail: 6,
            seed: 0,
        }
    }
}

/// Every interaction is an engagement edge stamped with its time. The last
/// interaction of each member is its validation positive (absent from the
/// graph); the `train_tail` interactions before it are training positives.
/// Each positive has one negative from a different community.
pub fn planted_temporal(cfg: &TemporalDatasetConfig) -> LinkDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = GraphBuilder::new(engagement_schema());
    for m in 0..cfg.members {
        b.add_node(0, m as u64, noisy_onehot(&mut rng, 0, cfg.feature_dim, 0.0));
    }
    for i in 0..cfg.items {
        b.add_node(1, i as u64, noisy_onehot(&mut rng, i % cfg.communities, cfg.feature_dim, cfg.feature_signal));
    }
    let per_community = cfg.items.div_ceil(cfg.communities);
    let pick = |rng: &mut ChaCha8Rng, c: usize| loop {
        let i = c + cfg.communities * rng.gen_range(0..per_community);
        if i < cfg.items {
            break i;
        }
    };
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for m in 0..cfg.members {
        let mut c = rng.gen_range(0..cfg.communities);
        for t in 0..cfg.history {
            if t > 0 && rng.gen::<f64>() < 1.0 / cfg.run_length as f64 {
                c = (c + rng.gen_range(1..cfg.communities)) % cfg.communities;
            }
            let ts = 1_000 * (t as i64 + 1);
            let item = pick(&mut rng, c);
            let other = (c + rng.gen_range(1..cfg.communities)) % cfg.communities;
            let negative = pick(&mut rng, other);
            let rec = |item: usize, label: f64| TrainingRecord {
                member: NodeRef::key(0, m as u64),
                item: NodeRef::key(1, item as u64),
                label,
                timestamp: ts,
            };
            if t + 1 == cfg.history {
                validation.push(rec(item, 1.0));
                validation.push(rec(negative, 0.0));
            } else {
                add_interaction(&mut b, m as u64, item as u64, ts);
                if t + 1 + cfg.train_tail >= cfg.history {
                    train.push(rec(item, 1.0));
                    train.push(rec(negative, 0.0));
                }
            }
        }
    }
    LinkDataset { graph: b.finish().0, train, validation }
}

/// `n` unit-scale vectors around `clusters` well separated centres; returns
/// the table (node type 0, ids `0..n`) and each node's cluster.
pub fn clustered_embeddings(n: usize, clusters: usize, dim: usize, spread: f64, seed: u64) -> (EmbeddingTable, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centres: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect()).collect();
    let mut table = EmbeddingTable::new(dim);
    let mut labels = Vec::with_capacity(n);
    for id in 0..n {
        let c = id % clusters;
        let v: Vec<f64> = centres[c].iter().map(|x| x + spread * normal.sample(&mut rng)).collect();
        table.insert(NodeRef::key(0, id as u64), v).expect("dimension matches");
        labels.push(c);
    }
    (table, labels)
}
