use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use lignn_core::graph::GraphError;
use lignn_core::model::{build_trees, Model, NeighborStrategy, Role, TreeSpec};
use lignn_core::samplers::WalkConfig;
use lignn_core::{HeteroGraph, NodeRef};
use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::epoch::EpochGraph;
use crate::store::EmbeddingStore;

#[derive(Debug, Error)]
pub enum NearlineError {
    #[error("events line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model does not fit the graph: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Click,
    Apply,
    Like,
    Connect,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::Click, EventKind::Apply, EventKind::Like, EventKind::Connect];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Click => "click",
            EventKind::Apply => "apply",
            EventKind::Like => "like",
            EventKind::Connect => "connect",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown event kind {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionEvent {
    pub ts_ms: i64,
    pub kind: EventKind,
    pub member: NodeRef,
    pub item: NodeRef,
}

impl InteractionEvent {
    /// `ts_ms<TAB>kind<TAB>member_type<TAB>member_id<TAB>item_type<TAB>item_id`
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.split('\t').collect();
        let [ts, kind, mt, mid, it, iid] = cols[..] else {
            return Err(format!("expected 6 columns, got {}", cols.len()));
        };
        fn num<T: FromStr>(what: &str, v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("{what} {v:?}: {e}"))
        }
        Ok(Self {
            ts_ms: num("timestamp", ts)?,
            kind: kind.parse()?,
            member: NodeRef::key(num("member type", mt)?, num("member id", mid)?),
            item: NodeRef::key(num("item type", it)?, num("item id", iid)?),
        })
    }
}

impl fmt::Display for InteractionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.ts_ms, self.kind, self.member.node_type, self.member.node_id, self.item.node_type, self.item.node_id
        )
    }
}

/// Parses an events file. Empty lines are skipped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<InteractionEvent>, NearlineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(InteractionEvent::parse_line(&line).map_err(|msg| NearlineError::Parse { line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn write_events<W: Write>(events: &[InteractionEvent], mut w: W) -> io::Result<()> {
    for e in events {
        writeln!(w, "{e}")?;
    }
    w.flush()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NearlineConfig {
    /// Compute-tree sampler used for re-inference.
    pub tree: TreeSpec,
    /// Edge type inserted (in both directions) per event kind.
    pub edge_types: BTreeMap<EventKind, u16>,
    /// Weight of an inserted edge.
    pub edge_weight: f64,
    /// Node types encoded with the source tower; others use the destination
    /// tower.
    pub source_types: BTreeSet<u16>,
    /// Length of each item's recent-interactor list.
    pub recent_capacity: usize,
    /// Re-infer every touched node once the stream ends.
    pub settle: bool,
}

impl NearlineConfig {
    /// Two-hop PPR trees (`fanout` children per level, `layers` levels).
    pub fn ppr(layers: usize, fanout: usize) -> Self {
        Self {
            tree: TreeSpec {
                strategy: NeighborStrategy::PprTwoHop(WalkConfig { num_walks: 200, ..WalkConfig::default() }),
                fanouts: vec![fanout; layers],
                rng_seed: 0,
            },
            edge_types: EventKind::ALL.into_iter().map(|k| (k, 1)).collect(),
            edge_weight: 1.0,
            source_types: BTreeSet::from([0]),
            recent_capacity: 20,
            settle: true,
        }
    }

    pub fn role_of(&self, node: NodeRef) -> Role {
        if self.source_types.contains(&node.node_type) {
            Role::Source
        } else {
            Role::Destination
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NearlineReport {
    pub events: usize,
    pub applied: usize,
    /// `(event position, node)` for events skipped because a node is unknown.
    pub skipped: Vec<(usize, String)>,
    pub out_of_order: usize,
    /// Embedding writes made while applying events.
    pub refreshed: usize,
    /// Embeddings rewritten by the final settle pass.
    pub settled: usize,
}

/// Applies interaction events to the graph and keeps the embeddings of the
/// touched nodes current.
pub struct NearlineRefresher {
    model: Model,
    graph: Arc<EpochGraph>,
    store: Arc<EmbeddingStore>,
    config: NearlineConfig,
    recent: HashMap<NodeRef, VecDeque<(NodeRef, i64)>>,
    touched: BTreeSet<NodeRef>,
    last_ts: Option<i64>,
    report: NearlineReport,
}

/// Checks that `model` can encode every node of `graph`.
pub fn check_compatible(model: &Model, graph: &HeteroGraph) -> Result<(), NearlineError> {
    let c = &model.config;
    for t in graph.node_types() {
        let Some(dim) = c.feature_dims.get(&t) else {
            return Err(NearlineError::Mismatch(format!("node type {t} has no input projection")));
        };
        if *dim != graph.feature_dim(t) {
            return Err(NearlineError::Mismatch(format!(
                "node type {t}: model expects {dim} features, graph has {}",
                graph.feature_dim(t)
            )));
        }
        if c.id_embeddings && c.node_counts.get(&t) != Some(&graph.node_count(t)) {
            return Err(NearlineError::Mismatch(format!(
                "node type {t}: ID table for {:?} nodes, graph has {}",
                c.node_counts.get(&t),
                graph.node_count(t)
            )));
        }
    }
    Ok(())
}

/// Embedding of each node on `graph` (`None` for unknown nodes).
pub fn infer(model: &Model, graph: &HeteroGraph, config: &NearlineConfig, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>> {
    let roots: Vec<NodeRef> = nodes.iter().map(|n| graph.resolve_ref(*n).unwrap_or(*n)).collect();
    let (trees, _) = build_trees(graph, &roots, &config.tree);
    roots.iter().zip(trees).map(|(n, t)| t.ok().map(|t| model.embed_tree(config.role_of(*n), &t))).collect()
}

impl NearlineRefresher {
    pub fn new(
        model: Model,
        graph: Arc<EpochGraph>,
        store: Arc<EmbeddingStore>,
        config: NearlineConfig,
    ) -> Result<Self, NearlineError> {
        let g = graph.load();
        check_compatible(&model, &g)?;
        if config.tree.fanouts.len() != model.config.layers {
            return Err(NearlineError::Config(format!(
                "{} tree levels for a {}-layer model",
                config.tree.fanouts.len(),
                model.config.layers
            )));
        }
        for (kind, et) in &config.edge_types {
            if g.schema().edge_kind(*et).is_none() {
                return Err(NearlineError::Config(format!("edge type {et} for {kind} events is not in the schema")));
            }
        }
        if !(config.edge_weight.is_finite() && config.edge_weight > 0.0) {
            return Err(NearlineError::Config(format!("edge weight {}", config.edge_weight)));
        }
        Ok(Self {
            model,
            graph,
            store,
            config,
            recent: HashMap::new(),
            touched: BTreeSet::new(),
            last_ts: None,
            report: NearlineReport::default(),
        })
    }

    pub fn report(&self) -> &NearlineReport {
        &self.report
    }

    pub fn store(&self) -> &Arc<EmbeddingStore> {
        &self.store
    }

    pub fn graph(&self) -> &Arc<EpochGraph> {
        &self.graph
    }

    /// Most recent interactors of `item`, newest first.
    pub fn recent_interactors(&self, item: NodeRef) -> Vec<(NodeRef, i64)> {
        let key = NodeRef::key(item.node_type, item.node_id);
        self.recent.get(&key).map(|q| q.iter().copied().collect()).unwrap_or_default()
    }

    /// Applies one event: both edge directions go into a new graph epoch,
    /// then the member and item embeddings are re-inferred and written.
    pub fn apply(&mut self, event: &InteractionEvent) -> Result<(), NearlineError> {
        let position = self.report.events;
        self.report.events += 1;
        if self.last_ts.is_some_and(|t| event.ts_ms < t) {
            warn!("event {position} at {} is older than its predecessor", event.ts_ms);
            self.report.out_of_order += 1;
        }
        self.last_ts = Some(self.last_ts.map_or(event.ts_ms, |t| t.max(event.ts_ms)));

        let current = self.graph.load();
        for n in [event.member, event.item] {
            if !current.contains(n) {
                warn!("event {position} skipped: unknown node {n}");
                self.report.skipped.push((position, n.to_string()));
                return Ok(());
            }
        }
        let et = *self
            .config
            .edge_types
            .get(&event.kind)
            .ok_or_else(|| NearlineError::Config(format!("no edge type for {} events", event.kind)))?;
        let w = self.config.edge_weight;
        self.graph.update(|g| {
            g.with_edge_upserted(event.member, et, event.item, w, event.ts_ms)?
                .with_edge_upserted(event.item, et, event.member, w, event.ts_ms)
        })?;
        self.report.applied += 1;

        let item = NodeRef::key(event.item.node_type, event.item.node_id);
        let queue = self.recent.entry(item).or_default();
        queue.push_front((NodeRef::key(event.member.node_type, event.member.node_id), event.ts_ms));
        queue.truncate(self.config.recent_capacity);

        let nodes = [event.member, event.item];
        let graph = self.graph.load();
        for (n, v) in nodes.iter().zip(infer(&self.model, &graph, &self.config, &nodes)) {
            let v = v.expect("endpoints are known");
            self.store.put(*n, v, event.ts_ms);
            self.touched.insert(NodeRef::key(n.node_type, n.node_id));
            self.report.refreshed += 1;
        }
        Ok(())
    }

    /// Re-infers every touched node on the current graph and writes the
    /// ones whose embedding changed (a later event may have altered their
    /// neighborhood). Returns the number of rewrites.
    pub fn settle(&mut self) -> usize {
        let nodes: Vec<NodeRef> = self.touched.iter().copied().collect();
        let graph = self.graph.load();
        let at = self.last_ts.unwrap_or(0);
        let mut rewritten = 0;
        for (n, v) in nodes.iter().zip(infer(&self.model, &graph, &self.config, &nodes)) {
            let v = v.expect("touched nodes are known");
            if self.store.get(*n).is_none_or(|e| e.vector != v) {
                self.store.put(*n, v, at);
                rewritten += 1;
            }
        }
        self.report.settled += rewritten;
        rewritten
    }

    /// Consumes events line by line (a file or a socket) until EOF.
    pub fn run<R: BufRead>(&mut self, reader: R) -> Result<NearlineReport, NearlineError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let event = InteractionEvent::parse_line(&line).map_err(|msg| NearlineError::Parse { line: i + 1, msg })?;
            self.apply(&event)?;
        }
        if self.config.settle {
            self.settle();
        }
        info!(
            "nearline: {} events, {} applied, {} skipped, {} out of order, {} settled",
            self.report.events,
            self.report.applied,
            self.report.skipped.len(),
            self.report.out_of_order,
            self.report.settled
        );
        Ok(self.report.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lignn_core::model::ModelConfig;
    use lignn_core::synthetic::{planted_bipartite, BipartiteConfig};

    fn setup() -> (Model, HeteroGraph) {
        let data = planted_bipartite(&BipartiteConfig { members: 40, items: 40, communities: 4, feature_dim: 3, ..BipartiteConfig::default() });
        let mut cfg = ModelConfig::new(BTreeMap::from([(0, 3), (1, 3)]), 5, 2);
        cfg.node_counts = data.graph.node_counts();
        cfg.id_embeddings = true;
        cfg.id_dim = 2;
        (Model::new(cfg, 3).unwrap(), data.graph)
    }

    fn refresher(model: Model, graph: HeteroGraph) -> NearlineRefresher {
        let config = NearlineConfig::ppr(2, 4);
        NearlineRefresher::new(model, Arc::new(EpochGraph::new(graph)), Arc::new(EmbeddingStore::new()), config).unwrap()
    }

    #[test]
    fn event_lines_round_trip() {
        let line = "1700000000000\tapply\t0\t17\t1\t4";
        let e = InteractionEvent::parse_line(line).unwrap();
        assert_eq!(e.kind, EventKind::Apply);
        assert_eq!(e.member, NodeRef::key(0, 17));
        assert_eq!(e.to_string(), line);
        for bad in ["1\tclick\t0\t1\t1", "x\tclick\t0\t1\t1\t2", "1\tview\t0\t1\t1\t2", "1\tclick\t0\t-1\t1\t2"] {
            assert!(InteractionEvent::parse_line(bad).is_err(), "{bad:?}");
        }
        assert!(matches!(read_events("\n1\tlike\t0\t1\t1\t2\nbad\n".as_bytes()), Err(NearlineError::Parse { line: 3, .. })));
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let (model, graph) = setup();
        let mut cfg = model.config.clone();
        cfg.feature_dims.insert(1, 4);
        let wrong = Model::new(cfg, 0).unwrap();
        let r = NearlineRefresher::new(
            wrong,
            Arc::new(EpochGraph::new(graph.clone())),
            Arc::new(EmbeddingStore::new()),
            NearlineConfig::ppr(2, 4),
        );
        assert!(matches!(r, Err(NearlineError::Mismatch(_))));
        let r = NearlineRefresher::new(
            model,
            Arc::new(EpochGraph::new(graph)),
            Arc::new(EmbeddingStore::new()),
            NearlineConfig::ppr(1, 4),
        );
        assert!(matches!(r, Err(NearlineError::Config(_))));
    }

    #[test]
    fn unknown_nodes_are_skipped_and_disorder_reported() {
        let (model, graph) = setup();
        let mut r = refresher(model, graph);
        let events = "5\tclick\t0\t1\t1\t2\n4\tlike\t0\t999\t1\t2\n3\tclick\t0\t1\t1\t3\n";
        let report = r.run(events.as_bytes()).unwrap();
        assert_eq!(report.events, 3);
        assert_eq!(report.applied, 2);
        assert_eq!(report.skipped, vec![(1, NodeRef::key(0, 999).to_string())]);
        assert_eq!(report.out_of_order, 2);
        assert_eq!(r.graph().epoch(), 2);
        assert_eq!(r.recent_interactors(NodeRef::key(1, 2)), vec![(NodeRef::key(0, 1), 5)]);
        assert_eq!(r.store().version(NodeRef::key(0, 999)), 0);
    }

    #[test]
    fn recent_interactors_are_capped_newest_first() {
        let (model, graph) = setup();
        let mut r = refresher(model, graph);
        r.config.recent_capacity = 3;
        r.config.settle = false;
        let events: String = (0..5).map(|m| format!("{m}\tclick\t0\t{m}\t1\t7\n")).collect();
        r.run(events.as_bytes()).unwrap();
        let got: Vec<u64> = r.recent_interactors(NodeRef::key(1, 7)).iter().map(|(n, _)| n.node_id).collect();
        assert_eq!(got, vec![4, 3, 2]);
    }
}
