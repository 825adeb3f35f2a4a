//! Personalized PageRank: batched forward push and a power-iteration oracle.
//!
//! Transition probabilities are proportional to edge weight (or uniform
//! when `weighted` is off). A node without out-edges behaves as if it had a
//! single self-loop, which keeps the transition matrix row-stochastic.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use super::{filter_edges, AdjacencySource, NeighborSample, SampleEntry, SampleError, Strategy};
use crate::graph::{HeteroGraph, NodeRef};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PprConfig {
    /// Restart probability, in (0, 1).
    pub alpha: f64,
    /// Push threshold: a node is pushed while `r(v) > r_max · deg(v)`.
    pub r_max: f64,
    pub top_k: usize,
    /// Safety cap on the number of pushes per seed.
    pub max_pushes: usize,
    /// Use edge weights as transition strengths (otherwise every edge is 1).
    pub weighted: bool,
    /// Keep the seed itself in the returned top-k.
    pub include_seed: bool,
    /// Restrict the walk to these edge types.
    pub edge_types: Option<Vec<u16>>,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            r_max: 1e-4,
            top_k: 200,
            max_pushes: 10_000_000,
            weighted: true,
            include_seed: false,
            edge_types: None,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SampleError::InvalidConfig(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(SampleError::InvalidConfig(format!("r_max {} must be positive", self.r_max)));
        }
        if self.top_k == 0 {
            return Err(SampleError::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Out-transitions of one node: neighbors with (unnormalised) strength.
#[derive(Debug)]
pub(crate) struct Transitions {
    pub(crate) targets: Vec<(NodeRef, f64)>,
    /// Σ strengths; the push threshold uses this as the node's degree.
    pub(crate) total: f64,
}

pub(crate) type TransitionCache = HashMap<NodeRef, Arc<Transitions>>;

/// Fetches transitions for `nodes` missing from `cache` in one round.
/// Returns the nodes whose adjacency could not be fetched.
pub(crate) fn fill_cache<S: AdjacencySource + ?Sized>(
    source: &S,
    nodes: BTreeSet<NodeRef>,
    cache: &mut TransitionCache,
    weighted: bool,
    edge_types: Option<&[u16]>,
) -> HashMap<NodeRef, SampleError> {
    let missing: Vec<NodeRef> = nodes.into_iter().filter(|n| !cache.contains_key(n)).collect();
    let mut failures = HashMap::new();
    if missing.is_empty() {
        return failures;
    }
    for (node, result) in missing.iter().zip(source.fetch_adjacency(&missing)) {
        match result {
            Ok(edges) => {
                let edges = filter_edges(edges, edge_types);
                let targets: Vec<(NodeRef, f64)> =
                    edges.iter().map(|e| (e.node, if weighted { e.weight } else { 1.0 })).collect();
                let total = targets.iter().map(|(_, w)| w).sum();
                cache.insert(*node, Arc::new(Transitions { targets, total }));
            }
            Err(e) => {
                failures.insert(*node, e);
            }
        }
    }
    failures
}

/// Result of a forward-push run for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PushResult {
    /// Top-k neighbors by estimate.
    pub sample: NeighborSample,
    /// Every non-zero estimate, sorted by node.
    pub estimates: Vec<(NodeRef, f64)>,
    /// Σ residual left when the push loop stopped.
    pub residual_mass: f64,
    pub pushes: usize,
    pub rounds: usize,
}

impl PushResult {
    pub fn estimate(&self, node: NodeRef) -> f64 {
        self.estimates
            .binary_search_by(|(n, _)| n.cmp(&node))
            .map_or(0.0, |i| self.estimates[i].1)
    }
}

struct PushState {
    seed: NodeRef,
    p: HashMap<NodeRef, f64>,
    r: HashMap<NodeRef, f64>,
    pushes: usize,
    rounds: usize,
    truncated: bool,
    done: bool,
    error: Option<SampleError>,
}

impl PushState {
    fn new(seed: NodeRef) -> Self {
        let mut r = HashMap::new();
        r.insert(seed, 1.0);
        Self { seed, p: HashMap::new(), r, pushes: 0, rounds: 0, truncated: false, done: false, error: None }
    }

    fn live(&self) -> bool {
        !self.done && self.error.is_none()
    }

    /// One synchronous round. Nodes above threshold at the start of the
    /// round are pushed in order of decreasing residual (ties by node);
    /// nodes that cross the threshold during the round wait for the next one.
    fn round(&mut self, config: &PprConfig, cache: &TransitionCache) {
        self.rounds += 1;
        let mut active: Vec<(NodeRef, f64)> = self
            .r
            .iter()
            .filter(|(v, r)| **r > config.r_max * cache[*v].total)
            .map(|(v, r)| (*v, *r))
            .collect();
        if active.is_empty() {
            self.done = true;
            return;
        }
        active.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (v, _) in active {
            if self.pushes >= config.max_pushes {
                self.truncated = true;
                self.done = true;
                return;
            }
            let residual = self.r.insert(v, 0.0).unwrap_or(0.0);
            if residual <= 0.0 {
                continue;
            }
            self.pushes += 1;
            let trans = &cache[&v];
            if trans.targets.is_empty() {
                // Implicit self-loop: the geometric series of pushes settles
                // all residual on the node itself.
                *self.p.entry(v).or_insert(0.0) += residual;
                continue;
            }
            *self.p.entry(v).or_insert(0.0) += config.alpha * residual;
            let spread = (1.0 - config.alpha) * residual / trans.total;
            for (u, w) in &trans.targets {
                *self.r.entry(*u).or_insert(0.0) += spread * w;
            }
        }
        self.r.retain(|_, r| *r > 0.0);
    }

    fn needs(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.r.keys().copied()
    }

    fn finish(self, config: &PprConfig, cache: &TransitionCache) -> Result<PushResult, SampleError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let mut residuals: Vec<(NodeRef, f64)> = self.r.into_iter().collect();
        residuals.sort_by(|a, b| a.0.cmp(&b.0));
        let hops = bfs_hops(self.seed, cache);
        let mut estimates: Vec<(NodeRef, f64)> = self.p.into_iter().filter(|(_, p)| *p > 0.0).collect();
        estimates.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ranked: Vec<(NodeRef, f64)> = estimates
            .iter()
            .copied()
            .filter(|(n, _)| config.include_seed || *n != self.seed)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(config.top_k);
        let mut sample = NeighborSample::new(self.seed, Strategy::PprPush);
        sample.truncated = self.truncated;
        sample.entries = ranked
            .into_iter()
            .map(|(node, score)| SampleEntry { node, score, hop: hops.get(&node).copied().unwrap_or(0) })
            .collect();
        Ok(PushResult {
            sample,
            estimates,
            residual_mass: residuals.iter().map(|(_, r)| r).sum(),
            pushes: self.pushes,
            rounds: self.rounds,
        })
    }
}

/// Shortest hop distance from `seed` over the cached adjacency.
pub(crate) fn bfs_hops(seed: NodeRef, cache: &TransitionCache) -> HashMap<NodeRef, u32> {
    let mut hops = HashMap::new();
    hops.insert(seed, 0);
    let mut queue = VecDeque::from([seed]);
    while let Some(v) = queue.pop_front() {
        let d = hops[&v];
        if let Some(t) = cache.get(&v) {
            for (u, _) in &t.targets {
                if !hops.contains_key(u) {
                    hops.insert(*u, d + 1);
                    queue.push_back(*u);
                }
            }
        }
    }
    hops
}

/// Forward push for a single seed.
pub fn ppr_forward_push<S: AdjacencySource + ?Sized>(
    source: &S,
    seed: NodeRef,
    config: &PprConfig,
) -> Result<PushResult, SampleError> {
    ppr_forward_push_batch(source, &[seed], config).pop().expect("one result per seed")
}

/// Forward push for many seeds. Each round gathers the adjacency every
/// seed still needs into a single fetch; per-seed arithmetic is identical
/// to [`ppr_forward_push`], so results are bit-for-bit equal.
pub fn ppr_forward_push_batch<S: AdjacencySource + ?Sized>(
    source: &S,
    seeds: &[NodeRef],
    config: &PprConfig,
) -> Vec<Result<PushResult, SampleError>> {
    if let Err(e) = config.validate() {
        return seeds.iter().map(|_| Err(e.clone())).collect();
    }
    let edge_types = config.edge_types.as_deref();
    let mut cache = TransitionCache::new();
    let mut states: Vec<PushState> = seeds.iter().map(|s| PushState::new(*s)).collect();

    loop {
        let wanted: BTreeSet<NodeRef> = states.iter().filter(|s| s.live()).flat_map(|s| s.needs()).collect();
        let failures = fill_cache(source, wanted, &mut cache, config.weighted, edge_types);
        for state in states.iter_mut().filter(|s| s.live()) {
            let failed = state.needs().find_map(|n| failures.get(&n)).cloned();
            if failed.is_some() {
                state.error = failed;
            }
        }
        let mut any_live = false;
        for state in states.iter_mut().filter(|s| s.live()) {
            state.round(config, &cache);
            any_live |= state.live();
        }
        if !any_live {
            break;
        }
    }
    states.into_iter().map(|s| s.finish(config, &cache)).collect()
}

/// Dense PPR vector from power iteration.
#[derive(Clone, Debug)]
pub struct ExactPpr {
    /// Every node of the graph in `(node_type, node_id)` order.
    pub nodes: Vec<NodeRef>,
    pub scores: Vec<f64>,
    /// L1 change of the final iteration.
    pub residual_l1: f64,
}

impl ExactPpr {
    pub fn score(&self, node: NodeRef) -> f64 {
        self.nodes.binary_search(&node).map_or(0.0, |i| self.scores[i])
    }
}

/// `π ← α·e_seed + (1 − α)·π·P`, starting from `e_seed`.
pub fn ppr_exact(
    graph: &HeteroGraph,
    seed: NodeRef,
    alpha: f64,
    num_iterations: usize,
    weighted: bool,
    edge_types: Option<&[u16]>,
) -> Result<ExactPpr, SampleError> {
    let seed = graph.resolve_ref(seed)?;
    let nodes: Vec<NodeRef> = graph.all_nodes().collect();
    let position: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let rows: Vec<Vec<(usize, f64)>> = nodes
        .iter()
        .map(|n| {
            let edges = filter_edges(graph.out_edges_all(*n).expect("node from graph"), edge_types);
            let total: f64 = edges.iter().map(|e| if weighted { e.weight } else { 1.0 }).sum();
            edges
                .iter()
                .map(|e| (position[&e.node], if weighted { e.weight } else { 1.0 } / total))
                .collect()
        })
        .collect();

    let s = position[&seed];
    let mut pi = vec![0.0; nodes.len()];
    pi[s] = 1.0;
    let mut next = vec![0.0; nodes.len()];
    let mut residual_l1 = f64::INFINITY;
    for _ in 0..num_iterations.max(1) {
        next.iter_mut().for_each(|x| *x = 0.0);
        next[s] = alpha;
        for (u, row) in rows.iter().enumerate() {
            let mass = (1.0 - alpha) * pi[u];
            if mass == 0.0 {
                continue;
            }
            if row.is_empty() {
                next[u] += mass;
            } else {
                for (v, p) in row {
                    next[*v] += mass * p;
                }
            }
        }
        residual_l1 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
    }
    Ok(ExactPpr { nodes, scores: pi, residual_l1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::test_graphs::*;

    fn two_cycle() -> HeteroGraph {
        from_edges(2, &[edge(0, ENGAGE, 1, 1.0, 0), edge(1, ENGAGE, 0, 1.0, 0)])
    }

    #[test]
    fn exact_isolated_node() {
        let g = from_edges(3, &[edge(1, ENGAGE, 2, 1.0, 0)]);
        let seed = g.resolve(0, 0).unwrap();
        let pi = ppr_exact(&g, seed, 0.15, 50, true, None).unwrap();
        assert_eq!(pi.score(seed), 1.0);
        assert_eq!(pi.scores.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn exact_two_cycle_closed_form() {
        let g = two_cycle();
        let s = g.resolve(0, 0).unwrap();
        let v = g.resolve(0, 1).unwrap();
        let alpha: f64 = 0.5;
        let pi = ppr_exact(&g, s, alpha, 200, true, None).unwrap();
        let expected_s = alpha / (1.0 - (1.0 - alpha).powi(2));
        assert!((pi.score(s) - expected_s).abs() < 1e-10);
        assert!((pi.score(v) - (1.0 - expected_s)).abs() < 1e-10);
        assert!(pi.residual_l1 < 1e-12);
    }

    #[test]
    fn exact_is_stochastic() {
        for seed in 0..5 {
            let g = random_graph(80, 3, seed, false);
            let s = g.nodes_of(0).nth(seed as usize).unwrap();
            let pi = ppr_exact(&g, s, 0.2, 100, true, None).unwrap();
            assert!((pi.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn push_dangling_seed() {
        let g = from_edges(2, &[edge(1, ENGAGE, 0, 1.0, 0)]);
        let seed = g.resolve(0, 0).unwrap();
        let cfg = PprConfig { include_seed: true, ..PprConfig::default() };
        let res = ppr_forward_push(&g, seed, &cfg).unwrap();
        assert!((res.estimate(seed) - 1.0).abs() <= cfg.r_max);
        assert_eq!(res.sample.entries.len(), 1);
        assert_eq!(res.sample.entries[0].hop, 0);
    }

    #[test]
    fn push_two_cycle_within_bound() {
        let g = two_cycle();
        let s = g.resolve(0, 0).unwrap();
        let v = g.resolve(0, 1).unwrap();
        let cfg = PprConfig { alpha: 0.5, r_max: 1e-6, include_seed: true, ..PprConfig::default() };
        let res = ppr_forward_push(&g, s, &cfg).unwrap();
        let exact = ppr_exact(&g, s, 0.5, 200, true, None).unwrap();
        for n in [s, v] {
            let gap = exact.score(n) - res.estimate(n);
            assert!(gap >= -1e-12 && gap <= cfg.r_max * 1.0, "gap {gap}");
        }
        assert!((res.estimate(s) - 2.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn push_error_bound_on_random_graph() {
        let g = random_graph(100, 4, 3, true);
        let cfg = PprConfig { r_max: 1e-5, top_k: 1000, ..PprConfig::default() };
        for s in g.nodes_of(0).step_by(17) {
            let res = ppr_forward_push(&g, s, &cfg).unwrap();
            let exact = ppr_exact(&g, s, cfg.alpha, 400, true, None).unwrap();
            for (i, n) in exact.nodes.iter().enumerate() {
                let deg: f64 = g.out_edges_all(*n).unwrap().iter().map(|e| e.weight).sum();
                let gap = exact.scores[i] - res.estimate(*n);
                assert!(gap >= -1e-12, "negative gap {gap} at {n}");
                assert!(gap <= cfg.r_max * deg + 1e-12, "gap {gap} exceeds bound at {n}");
            }
        }
    }

    #[test]
    fn batch_matches_sequential_bitwise() {
        let g = random_graph(100, 4, 8, true);
        let seeds: Vec<NodeRef> = g.nodes_of(0).step_by(10).collect();
        let cfg = PprConfig { r_max: 1e-6, ..PprConfig::default() };
        let batch = ppr_forward_push_batch(&g, &seeds, &cfg);
        for (s, b) in seeds.iter().zip(&batch) {
            assert_eq!(&ppr_forward_push(&g, *s, &cfg), b);
        }
    }

    #[test]
    fn batch_isolates_unknown_seed() {
        let g = random_graph(30, 3, 1, true);
        let mut seeds: Vec<NodeRef> = g.nodes_of(0).take(9).collect();
        seeds.insert(4, NodeRef::key(0, 10_000));
        let out = ppr_forward_push_batch(&g, &seeds, &PprConfig::default());
        assert_eq!(out.iter().filter(|r| r.is_ok()).count(), 9);
        assert_eq!(out[4], Err(SampleError::UnknownNode(NodeRef::key(0, 10_000))));
    }

    #[test]
    fn truncation_is_flagged() {
        let g = random_graph(50, 4, 2, true);
        let s = g.nodes_of(0).next().unwrap();
        let cfg = PprConfig { max_pushes: 3, r_max: 1e-8, ..PprConfig::default() };
        let res = ppr_forward_push(&g, s, &cfg).unwrap();
        assert!(res.sample.truncated);
        assert_eq!(res.pushes, 3);
    }

    #[test]
    fn rejects_bad_config() {
        let g = two_cycle();
        let s = g.resolve(0, 0).unwrap();
        for cfg in [
            PprConfig { alpha: 1.0, ..PprConfig::default() },
            PprConfig { r_max: 0.0, ..PprConfig::default() },
            PprConfig { top_k: 0, ..PprConfig::default() },
        ] {
            assert!(matches!(ppr_forward_push(&g, s, &cfg), Err(SampleError::InvalidConfig(_))));
        }
    }
}
