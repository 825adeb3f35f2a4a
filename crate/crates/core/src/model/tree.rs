//! Compute trees: the sampled multi-hop neighborhood the encoder consumes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::graph::{HeteroGraph, NodeRef};
use crate::samplers::{
    ppr_forward_push_batch, ppr_two_hop_batch, sample_random_multihop, sample_temporal_last_n,
    sample_weighted_multihop, AdjacencySource, PprConfig, SampleError, WalkConfig,
};

/// Batched feature lookup; `None` for nodes without a feature row.
pub trait FeatureSource {
    fn fetch_features(&self, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>>;
}

impl FeatureSource for HeteroGraph {
    fn fetch_features(&self, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>> {
        nodes.iter().map(|n| self.features(*n).map(|f| f.to_vec())).collect()
    }
}

impl<T: FeatureSource + ?Sized> FeatureSource for &T {
    fn fetch_features(&self, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>> {
        (**self).fetch_features(nodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub node: NodeRef,
    pub features: Option<Vec<f64>>,
    /// Edge weight or PPR score that selected this node (1.0 at the root).
    pub weight: f64,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(node: NodeRef, features: Option<Vec<f64>>) -> Self {
        Self { node, features, weight: 1.0, children: Vec::new() }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0)
    }
}

/// One activity of a temporal sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Activity {
    pub node: NodeRef,
    pub features: Option<Vec<f64>>,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborStrategy {
    Random,
    Weighted(BTreeMap<u16, f64>),
    PprPush(PprConfig),
    PprTwoHop(WalkConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeSpec {
    pub strategy: NeighborStrategy,
    /// Children per node at each level; the length is the tree depth.
    pub fanouts: Vec<usize>,
    pub rng_seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TreeStats {
    /// Sampler invocations (one batched call per tree level).
    pub sampler_calls: usize,
    /// Nodes whose neighbors were requested.
    pub neighbor_queries: usize,
    /// Neighbors returned across all requests.
    pub neighbors_fetched: usize,
}

impl std::ops::AddAssign for TreeStats {
    fn add_assign(&mut self, o: Self) {
        self.sampler_calls += o.sampler_calls;
        self.neighbor_queries += o.neighbor_queries;
        self.neighbors_fetched += o.neighbors_fetched;
    }
}

type Children = Vec<(NodeRef, f64)>;

fn sample_children<S: AdjacencySource + ?Sized>(
    source: &S,
    nodes: &[NodeRef],
    fanout: usize,
    spec: &TreeSpec,
) -> Vec<Result<Children, SampleError>> {
    let from_entries = |e: &crate::samplers::NeighborSample| e.entries.iter().map(|x| (x.node, x.score)).collect();
    match &spec.strategy {
        NeighborStrategy::Random => sample_random_multihop(source, nodes, &[fanout], spec.rng_seed)
            .into_iter()
            .map(|r| r.map(|hops| from_entries(&hops[0])))
            .collect(),
        NeighborStrategy::Weighted(m) => sample_weighted_multihop(source, nodes, &[fanout], m, spec.rng_seed)
            .into_iter()
            .map(|r| r.map(|hops| from_entries(&hops[0])))
            .collect(),
        NeighborStrategy::PprPush(cfg) => {
            let cfg = PprConfig { top_k: fanout, ..cfg.clone() };
            ppr_forward_push_batch(source, nodes, &cfg).into_iter().map(|r| r.map(|p| from_entries(&p.sample))).collect()
        }
        NeighborStrategy::PprTwoHop(cfg) => {
            let cfg = WalkConfig { top_k: fanout, rng_seed: spec.rng_seed, ..cfg.clone() };
            ppr_two_hop_batch(source, nodes, &cfg).into_iter().map(|r| r.map(|w| from_entries(&w.sample))).collect()
        }
    }
}

/// Builds one compute tree per root, sampling level by level with one
/// batched call per level. A node's children depend only on the node, the
/// strategy and `rng_seed`, so shared nodes get identical subtrees.
pub fn build_trees<S: AdjacencySource + FeatureSource + ?Sized>(
    source: &S,
    roots: &[NodeRef],
    spec: &TreeSpec,
) -> (Vec<Result<TreeNode, SampleError>>, TreeStats) {
    let mut stats = TreeStats::default();
    let mut children: Vec<HashMap<NodeRef, Children>> = Vec::new();
    let mut failed: HashMap<NodeRef, SampleError> = HashMap::new();
    let mut frontier: BTreeSet<NodeRef> = roots.iter().copied().collect();
    let mut all: BTreeSet<NodeRef> = frontier.clone();

    for &fanout in &spec.fanouts {
        let nodes: Vec<NodeRef> = frontier.iter().copied().filter(|n| !failed.contains_key(n)).collect();
        let mut level = HashMap::new();
        let mut next = BTreeSet::new();
        if fanout > 0 && !nodes.is_empty() {
            stats.sampler_calls += 1;
            stats.neighbor_queries += nodes.len();
            for (n, r) in nodes.iter().zip(sample_children(source, &nodes, fanout, spec)) {
                match r {
                    Ok(kids) => {
                        stats.neighbors_fetched += kids.len();
                        next.extend(kids.iter().map(|(k, _)| *k));
                        level.insert(*n, kids);
                    }
                    Err(e) => {
                        failed.insert(*n, e);
                    }
                }
            }
        }
        all.extend(next.iter().copied());
        children.push(level);
        frontier = next;
    }

    let ordered: Vec<NodeRef> = all.into_iter().collect();
    let features: HashMap<NodeRef, Option<Vec<f64>>> =
        ordered.iter().copied().zip(source.fetch_features(&ordered)).collect();

    fn assemble(
        node: NodeRef,
        weight: f64,
        level: usize,
        children: &[HashMap<NodeRef, Children>],
        features: &HashMap<NodeRef, Option<Vec<f64>>>,
    ) -> TreeNode {
        let kids = children
            .get(level)
            .and_then(|l| l.get(&node))
            .map(|ks| ks.iter().map(|(k, w)| assemble(*k, *w, level + 1, children, features)).collect())
            .unwrap_or_default();
        TreeNode { node, features: features.get(&node).cloned().flatten(), weight, children: kids }
    }

    let trees = roots
        .iter()
        .map(|r| {
            // a failure anywhere below the root fails the root's tree
            let mut stack = vec![(*r, 0usize)];
            while let Some((n, level)) = stack.pop() {
                if let Some(e) = failed.get(&n) {
                    return Err(e.clone());
                }
                if let Some(kids) = children.get(level).and_then(|l| l.get(&n)) {
                    stack.extend(kids.iter().map(|(k, _)| (*k, level + 1)));
                }
            }
            Ok(assemble(*r, 1.0, 0, &children, &features))
        })
        .collect();
    (trees, stats)
}

/// The member's last `n` activities on `edge_type` before `before_ts`.
pub fn build_activities(
    graph: &HeteroGraph,
    member: NodeRef,
    edge_type: u16,
    before_ts: i64,
    n: usize,
) -> Result<Vec<Activity>, SampleError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let events = sample_temporal_last_n(graph, member, edge_type, before_ts, n)?;
    Ok(events
        .into_iter()
        .map(|(node, timestamp)| Activity { node, features: graph.features(node).map(|f| f.to_vec()), timestamp })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::test_graphs::*;

    #[test]
    fn random_tree_shape_and_determinism() {
        let g = random_graph(50, 4, 3, true);
        let roots: Vec<NodeRef> = g.nodes_of(0).take(5).collect();
        let spec = TreeSpec { strategy: NeighborStrategy::Random, fanouts: vec![3, 2], rng_seed: 4 };
        let (trees, stats) = build_trees(&g, &roots, &spec);
        assert_eq!(stats.sampler_calls, 2);
        for (r, t) in roots.iter().zip(&trees) {
            let t = t.as_ref().unwrap();
            assert_eq!(t.node, *r);
            assert!(t.children.len() <= 3 && t.children.iter().all(|c| c.children.len() <= 2));
            assert!(t.depth() <= 2);
            let (single, _) = build_trees(&g, &[*r], &spec);
            assert_eq!(single[0].as_ref().unwrap(), t);
        }
    }

    #[test]
    fn zero_fanout_has_no_sampler_calls() {
        let g = random_graph(20, 3, 1, true);
        let roots: Vec<NodeRef> = g.nodes_of(0).take(3).collect();
        let spec = TreeSpec { strategy: NeighborStrategy::Random, fanouts: vec![0], rng_seed: 0 };
        let (trees, stats) = build_trees(&g, &roots, &spec);
        assert_eq!(stats, TreeStats::default());
        assert!(trees.iter().all(|t| t.as_ref().unwrap().children.is_empty()));
    }

    #[test]
    fn ppr_tree_children_are_top_k() {
        let g = random_graph(40, 3, 2, true);
        let root = g.nodes_of(0).next().unwrap();
        let spec = TreeSpec { strategy: NeighborStrategy::PprPush(PprConfig::default()), fanouts: vec![5], rng_seed: 0 };
        let (trees, _) = build_trees(&g, &[root], &spec);
        let t = trees[0].as_ref().unwrap();
        assert_eq!(t.children.len(), 5);
        assert!(t.children.windows(2).all(|w| w[0].weight >= w[1].weight));
    }

    #[test]
    fn unknown_root_fails_alone() {
        let g = random_graph(20, 3, 1, true);
        let roots = [g.nodes_of(0).next().unwrap(), NodeRef::key(0, 999)];
        let spec = TreeSpec { strategy: NeighborStrategy::Random, fanouts: vec![2], rng_seed: 0 };
        let (trees, _) = build_trees(&g, &roots, &spec);
        assert!(trees[0].is_ok());
        assert!(trees[1].is_err());
    }
}
