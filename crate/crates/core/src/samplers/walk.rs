use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::ppr::{bfs_hops, fill_cache, TransitionCache};
use super::{AdjacencySource, NeighborSample, SampleEntry, SampleError, Strategy};
use crate::graph::NodeRef;
use crate::rng::keyed_rng;

/// Hop label of the random streams used by walks (multi-hop uses 1..).
const WALK_STREAM: u32 = 0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub num_walks: usize,
    pub alpha: f64,
    pub top_k: usize,
    pub rng_seed: u64,
    pub weighted: bool,
    pub include_seed: bool,
    pub edge_types: Option<Vec<u16>>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            num_walks: 10_000,
            alpha: 0.15,
            top_k: 200,
            rng_seed: 0,
            weighted: true,
            include_seed: false,
            edge_types: None,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.num_walks == 0 {
            return Err(SampleError::InvalidConfig("num_walks must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SampleError::InvalidConfig(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if self.top_k == 0 {
            return Err(SampleError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkResult {
    pub sample: NeighborSample,
    /// Visit fraction of every visited node (seed included), sorted by node.
    pub scores: Vec<(NodeRef, f64)>,
    pub total_visits: u64,
}

impl WalkResult {
    pub fn score(&self, node: NodeRef) -> f64 {
        self.scores
            .binary_search_by(|(n, _)| n.cmp(&node))
            .map_or(0.0, |i| self.scores[i].1)
    }
}

/// α-restart random walks confined to the 2-hop ball around `seed`.
///
/// Every position of a walk counts as a visit. A walk ends on restart
/// (probability α per step) or when its next step would leave the ball. A
/// node without out-edges keeps the walker in place.
pub fn ppr_two_hop_random_walk<S: AdjacencySource + ?Sized>(
    source: &S,
    seed: NodeRef,
    config: &WalkConfig,
) -> Result<WalkResult, SampleError> {
    ppr_two_hop_batch(source, &[seed], config).pop().expect("one result per seed")
}

/// Batched variant: the ball of every seed is discovered with three shared
/// adjacency rounds (seed, hop 1, hop 2), then walks run locally.
pub fn ppr_two_hop_batch<S: AdjacencySource + ?Sized>(
    source: &S,
    seeds: &[NodeRef],
    config: &WalkConfig,
) -> Vec<Result<WalkResult, SampleError>> {
    if let Err(e) = config.validate() {
        return seeds.iter().map(|_| Err(e.clone())).collect();
    }
    let edge_types = config.edge_types.as_deref();
    let mut cache = TransitionCache::new();
    let mut frontier: Vec<BTreeSet<NodeRef>> = seeds.iter().map(|s| BTreeSet::from([*s])).collect();
    let mut ball: Vec<BTreeSet<NodeRef>> = frontier.clone();
    let mut errors: Vec<Option<SampleError>> = vec![None; seeds.len()];

    for round in 0..3 {
        let wanted: BTreeSet<NodeRef> = frontier
            .iter()
            .zip(&errors)
            .filter(|(_, e)| e.is_none())
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        let failures = fill_cache(source, wanted, &mut cache, config.weighted, edge_types);
        for i in 0..seeds.len() {
            if errors[i].is_some() {
                continue;
            }
            if let Some(err) = frontier[i].iter().find_map(|n| failures.get(n)) {
                errors[i] = Some(err.clone());
                continue;
            }
            let mut next = BTreeSet::new();
            if round < 2 {
                for v in &frontier[i] {
                    for (u, _) in &cache[v].targets {
                        if ball[i].insert(*u) {
                            next.insert(*u);
                        }
                    }
                }
            }
            frontier[i] = next;
        }
    }

    seeds
        .iter()
        .zip(ball)
        .zip(errors)
        .map(|((seed, ball), err)| match err {
            Some(e) => Err(e),
            None => Ok(walk_seed(*seed, &ball, &cache, config)),
        })
        .collect()
}

fn walk_seed(seed: NodeRef, ball: &BTreeSet<NodeRef>, cache: &TransitionCache, config: &WalkConfig) -> WalkResult {
    let nodes: Vec<NodeRef> = ball.iter().copied().collect();
    let index: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    // Per node: cumulative strengths and target index (None = outside ball).
    let tables: Vec<(Vec<f64>, Vec<Option<usize>>)> = nodes
        .iter()
        .map(|n| {
            let t = &cache[n];
            let mut acc = 0.0;
            let cum = t.targets.iter().map(|(_, w)| {
                acc += w;
                acc
            });
            (cum.collect(), t.targets.iter().map(|(u, _)| index.get(u).copied()).collect())
        })
        .collect();

    let start = index[&seed];
    let mut visits = vec![0u64; nodes.len()];
    let mut rng = keyed_rng(config.rng_seed, seed, WALK_STREAM);
    for _ in 0..config.num_walks {
        let mut at = start;
        visits[at] += 1;
        while rng.gen::<f64>() >= config.alpha {
            let (cum, targets) = &tables[at];
            if let Some(&total) = cum.last() {
                let x = rng.gen::<f64>() * total;
                let j = cum.partition_point(|c| *c <= x).min(cum.len() - 1);
                match targets[j] {
                    Some(next) => at = next,
                    None => break,
                }
            }
            visits[at] += 1;
        }
    }

    let total: u64 = visits.iter().sum();
    let scores: Vec<(NodeRef, f64)> = nodes
        .iter()
        .zip(&visits)
        .filter(|(_, v)| **v > 0)
        .map(|(n, v)| (*n, *v as f64 / total as f64))
        .collect();
    let hops = bfs_hops(seed, cache);
    let mut ranked: Vec<(NodeRef, f64)> =
        scores.iter().copied().filter(|(n, _)| config.include_seed || *n != seed).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(config.top_k);
    let mut sample = NeighborSample::new(seed, Strategy::PprTwoHop);
    sample.entries = ranked
        .into_iter()
        .map(|(node, score)| SampleEntry { node, score, hop: hops[&node] })
        .collect();
    WalkResult { sample, scores, total_visits: total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::test_graphs::*;

    #[test]
    fn isolated_seed_only_itself() {
        let g = from_edges(2, &[]);
        let s = g.resolve(0, 0).unwrap();
        let cfg = WalkConfig { include_seed: true, num_walks: 100, ..WalkConfig::default() };
        let r = ppr_two_hop_random_walk(&g, s, &cfg).unwrap();
        assert_eq!(r.sample.entries.len(), 1);
        assert_eq!(r.sample.entries[0].node, s);
        assert_eq!(r.sample.entries[0].score, 1.0);
    }

    #[test]
    fn path_graph_stays_within_two_hops() {
        let g = from_edges(
            4,
            &[edge(0, ENGAGE, 1, 1.0, 0), edge(1, ENGAGE, 2, 1.0, 0), edge(2, ENGAGE, 3, 1.0, 0)],
        );
        let a = g.resolve(0, 0).unwrap();
        let cfg = WalkConfig { num_walks: 20_000, alpha: 0.05, ..WalkConfig::default() };
        let r = ppr_two_hop_random_walk(&g, a, &cfg).unwrap();
        assert!(r.sample.nodes().all(|n| n.node_id != 3));
        assert_eq!(r.score(NodeRef::key(0, 3)), 0.0);
        assert_eq!(r.sample.len(), 2);
        assert_eq!(r.sample.entries.iter().map(|e| e.hop).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn visit_fractions_form_a_distribution() {
        let g = random_graph(60, 3, 4, false);
        for s in g.nodes_of(0).take(5) {
            let r = ppr_two_hop_random_walk(&g, s, &WalkConfig::default()).unwrap();
            let sum: f64 = r.scores.iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_batch_equal() {
        let g = random_graph(60, 4, 9, true);
        let seeds: Vec<NodeRef> = g.nodes_of(0).take(6).collect();
        let cfg = WalkConfig { num_walks: 2000, rng_seed: 5, ..WalkConfig::default() };
        let batch = ppr_two_hop_batch(&g, &seeds, &cfg);
        for (s, b) in seeds.iter().zip(&batch) {
            assert_eq!(&ppr_two_hop_random_walk(&g, *s, &cfg), b);
        }
        let other = ppr_two_hop_random_walk(&g, seeds[0], &WalkConfig { rng_seed: 6, ..cfg.clone() });
        assert_ne!(other, batch[0]);
    }

    #[test]
    fn unknown_seed_isolated() {
        let g = random_graph(20, 3, 1, true);
        let seeds = [g.resolve(0, 0).unwrap(), NodeRef::key(0, 777)];
        let out = ppr_two_hop_batch(&g, &seeds, &WalkConfig { num_walks: 10, ..WalkConfig::default() });
        assert!(out[0].is_ok());
        assert_eq!(out[1], Err(SampleError::UnknownNode(NodeRef::key(0, 777))));
    }
}
