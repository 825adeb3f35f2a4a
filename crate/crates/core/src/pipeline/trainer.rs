use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adaptive::{adaptive_step, AdaptiveConfig, AdaptiveState};
use super::grouping::{group_and_slice, GroupedBatch};
use super::lga::local_gradient_aggregate;
use super::mlp_init::{mlp_init, MlpInitConfig};
use super::prefetch::{prefetch_pipeline, PrefetchConfig};
use super::{GraphQuery, PipelineError, TrainingRecord};
use crate::graph::NodeRef;
use crate::metrics::auc;
use crate::model::{Batch, Gradients, Model, NeighborStrategy, PairInput, Role, SourceInput, TreeNode, TreeSpec, TreeStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Group records by member before querying the engine.
    pub grouping: bool,
    pub group_size: usize,
    /// Parameter updates per grouped batch; must divide `group_size`.
    pub gradient_step: usize,
    pub strategy: NeighborStrategy,
    /// Neighbors sampled per node at the first hop (the adaptive schedule
    /// overrides this).
    pub neighbors: usize,
    /// Fixed fanouts of any deeper hops.
    pub inner_fanouts: Vec<usize>,
    pub adaptive: Option<AdaptiveConfig>,
    /// Micro-batch gradients summed locally before each update (1 = off).
    pub local_aggregation: usize,
    /// Multiply the learning rate by `local_aggregation`.
    pub lr_scaling: bool,
    pub prefetch: PrefetchConfig,
    pub mlp_init: Option<MlpInitConfig>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.05,
            grouping: true,
            group_size: 4,
            gradient_step: 1,
            strategy: NeighborStrategy::Random,
            neighbors: 10,
            inner_fanouts: Vec::new(),
            adaptive: None,
            local_aggregation: 1,
            lr_scaling: false,
            prefetch: PrefetchConfig::default(),
            mlp_init: None,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.group_size == 0 || self.gradient_step == 0 {
            return bad("group_size and gradient_step must be at least 1".into());
        }
        if self.grouping && self.group_size % self.gradient_step != 0 {
            return bad(format!("gradient_step {} does not divide group_size {}", self.gradient_step, self.group_size));
        }
        if self.local_aggregation == 0 {
            return bad("local_aggregation must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if let Some(a) = &self.adaptive {
            AdaptiveState::new(a)?;
        }
        Ok(())
    }

    pub fn tree_spec(&self, neighbors: usize, epoch: usize) -> TreeSpec {
        let mut fanouts = vec![neighbors];
        fanouts.extend_from_slice(&self.inner_fanouts);
        TreeSpec { strategy: self.strategy.clone(), fanouts, rng_seed: self.seed.wrapping_add(epoch as u64) }
    }
}

/// Cumulative instrumentation. Engine queries count root nodes whose
/// compute graph was requested.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrainCounters {
    pub member_queries: usize,
    pub item_queries: usize,
    pub activity_queries: usize,
    pub sampler_calls: usize,
    pub neighbor_queries: usize,
    /// Sampled neighbors returned by the engine (all hops).
    pub neighbors_fetched: usize,
    pub eval_queries: usize,
    pub updates: usize,
    pub pairs: usize,
    pub skipped_batches: usize,
    pub skipped_items: usize,
}

impl TrainCounters {
    fn add_tree_stats(&mut self, s: &TreeStats) {
        self.sampler_calls += s.sampler_calls;
        self.neighbor_queries += s.neighbor_queries;
        self.neighbors_fetched += s.neighbors_fetched;
    }
}

/// A grouped batch with its fetched compute graphs.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub index: usize,
    pub batch: GroupedBatch,
    /// `None` when the member's compute graph could not be fetched.
    pub member: Option<SourceInput>,
    /// Aligned with `batch.items`; `None` for padding and failed items.
    pub items: Vec<Option<TreeNode>>,
    pub stats: TreeStats,
    pub member_queries: usize,
    pub item_queries: usize,
    pub activity_queries: usize,
    pub failed_items: usize,
}

/// Fetches the member's compute graph (one query), the real items' graphs
/// (one query each) and, for temporal models, the member's activities.
pub fn prepare_batch<Q: GraphQuery + ?Sized>(
    query: &Q,
    index: usize,
    batch: &GroupedBatch,
    spec: &TreeSpec,
    model_temporal: Option<(u16, usize)>,
) -> PreparedBatch {
    let mut stats = TreeStats::default();
    let (mut trees, s) = query.trees(&[batch.member], spec);
    stats += s;
    let member_tree = trees.pop().and_then(|r| r.ok());
    let real = batch.real_items();
    let (item_trees, s) = query.trees(&real, spec);
    stats += s;
    let mut it = item_trees.into_iter();
    let mut failed_items = 0;
    let items = batch
        .mask
        .iter()
        .map(|m| {
            if !*m {
                return None;
            }
            let t = it.next().and_then(|r| r.ok());
            failed_items += usize::from(t.is_none());
            t
        })
        .collect();
    let mut activity_queries = 0;
    let member = member_tree.map(|tree| {
        let query_ts = batch.first_timestamp();
        let activities = match model_temporal {
            Some((edge_type, n)) => {
                activity_queries = 1;
                query.activities(tree.node, edge_type, query_ts, n).unwrap_or_default()
            }
            None => Vec::new(),
        };
        SourceInput { tree, activities, query_ts }
    });
    PreparedBatch {
        index,
        batch: batch.clone(),
        member,
        items,
        stats,
        member_queries: 1,
        item_queries: real.len(),
        activity_queries,
        failed_items,
    }
}

/// Model batch for item slots `range` of `p`: one source, one pair per
/// slot. Padded and failed slots are masked out.
pub fn slice_loss(p: &PreparedBatch, range: std::ops::Range<usize>) -> Option<Batch> {
    let member = p.member.clone()?;
    let pairs: Vec<PairInput> = range
        .map(|i| match &p.items[i] {
            Some(tree) if p.batch.mask[i] => PairInput { source: 0, dst: tree.clone(), label: p.batch.labels[i], mask: true },
            _ => PairInput { source: 0, dst: TreeNode::leaf(p.batch.items[i], None), label: 0.0, mask: false },
        })
        .collect();
    pairs.iter().any(|q| q.mask).then(|| Batch { sources: vec![member], pairs })
}

/// Per-slice gradients of a grouped batch: the items are cut into
/// `gradient_step` contiguous slices; slices without real items are skipped.
fn slice_gradients(
    model: &Model,
    p: &PreparedBatch,
    slice: usize,
    gradient_step: usize,
) -> Result<Option<(Gradients, usize, f64)>, PipelineError> {
    let local = p.batch.len() / gradient_step;
    match slice_loss(p, slice * local..(slice + 1) * local) {
        Some(b) => {
            let (loss, g, _) = model.loss_and_grad(&b)?;
            Ok(Some((g, b.real_pairs(), loss)))
        }
        None => Ok(None),
    }
}

/// Trains on one grouped batch: `gradient_step` sequential updates, one per
/// slice of `group_size / gradient_step` items, each from the masked mean
/// loss of its slice. Returns the number of updates made.
pub fn grouped_step(model: &mut Model, p: &PreparedBatch, gradient_step: usize, lr: f64) -> Result<usize, PipelineError> {
    if gradient_step == 0 || p.batch.len() % gradient_step != 0 {
        return Err(PipelineError::Config(format!(
            "gradient_step {gradient_step} does not divide group size {}",
            p.batch.len()
        )));
    }
    let mut updates = 0;
    for s in 0..gradient_step {
        if let Some((g, _, _)) = slice_gradients(model, p, s, gradient_step)? {
            model.apply(&g, lr);
            updates += 1;
        }
    }
    Ok(updates)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub auc: Option<f64>,
    pub neighbor_count: usize,
    pub queue_depth_max: usize,
    /// Member plus item compute-graph queries made for training this epoch.
    pub ge_queries: usize,
    pub neighbors_fetched: usize,
    pub mean_loss: f64,
    pub updates: usize,
}

/// Validation AUC of `model` on `records`; `None` when only one class is
/// present. Compute graphs are fetched in one query per distinct node.
pub fn evaluate<Q: GraphQuery + ?Sized>(
    model: &Model,
    query: &Q,
    records: &[TrainingRecord],
    spec: &TreeSpec,
) -> Result<(Option<f64>, TrainCounters), PipelineError> {
    let mut counters = TrainCounters::default();
    let mut nodes: Vec<NodeRef> = records.iter().flat_map(|r| [r.member, r.item]).collect();
    nodes.sort();
    nodes.dedup();
    let (trees, stats) = query.trees(&nodes, spec);
    counters.eval_queries += nodes.len();
    counters.add_tree_stats(&stats);
    let trees: HashMap<NodeRef, TreeNode> =
        nodes.iter().zip(trees).filter_map(|(n, t)| t.ok().map(|t| (*n, t))).collect();

    let temporal = model.config.temporal.as_ref().map(|t| (t.activity_edge_type, t.seq_len, t.use_dst_neighbors));
    let mut src_cache: HashMap<(NodeRef, i64), Vec<f64>> = HashMap::new();
    let mut dst_cache: HashMap<NodeRef, Vec<f64>> = HashMap::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let (Some(mt), Some(it)) = (trees.get(&r.member), trees.get(&r.item)) else {
            counters.skipped_items += 1;
            continue;
        };
        let v = dst_cache.entry(r.item).or_insert_with(|| model.embed_tree(Role::Destination, it)).clone();
        let u = match temporal {
            None => src_cache.entry((r.member, 0)).or_insert_with(|| model.embed_tree(Role::Source, mt)).clone(),
            Some((et, n, use_dst)) => {
                let key = (r.member, r.timestamp);
                let cached = if use_dst { None } else { src_cache.get(&key).cloned() };
                match cached {
                    Some(u) => u,
                    None => {
                        counters.activity_queries += 1;
                        let activities = query.activities(mt.node, et, r.timestamp, n).unwrap_or_default();
                        let src = SourceInput { tree: mt.clone(), activities, query_ts: r.timestamp };
                        let u = model.embed_source(&src, use_dst.then_some(it))?;
                        if !use_dst {
                            src_cache.insert(key, u.clone());
                        }
                        u
                    }
                }
            }
        };
        scores.push(model.score(&u, &v));
        labels.push(r.label > 0.5);
    }
    Ok((auc(&scores, &labels), counters))
}

/// Drives epochs: grouping, prefetching, per-slice updates, optional local
/// gradient aggregation, validation and the adaptive schedule.
pub struct Trainer<Q: GraphQuery + 'static> {
    pub model: Model,
    pub config: TrainerConfig,
    pub counters: TrainCounters,
    pub adaptive: Option<AdaptiveState>,
    query: Arc<Q>,
    epoch: usize,
}

impl<Q: GraphQuery + 'static> Trainer<Q> {
    pub fn new(model: Model, query: Arc<Q>, config: TrainerConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let adaptive = config.adaptive.as_ref().map(AdaptiveState::new).transpose()?;
        Ok(Self { model, config, counters: TrainCounters::default(), adaptive, query, epoch: 0 })
    }

    pub fn neighbor_count(&self) -> usize {
        self.adaptive.as_ref().map_or(self.config.neighbors, |a| a.current_neighbor_count)
    }

    pub fn query(&self) -> &Arc<Q> {
        &self.query
    }

    /// Training batches of one epoch, in the order they are consumed.
    pub fn epoch_batches(&self, records: &[TrainingRecord], epoch: usize) -> Result<Vec<GroupedBatch>, PipelineError> {
        let mut batches = if self.config.grouping {
            group_and_slice(records, self.config.group_size)?
        } else {
            records.iter().map(GroupedBatch::single).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        batches.shuffle(&mut rng);
        Ok(batches)
    }

    /// One pass over `records`; returns (mean slice loss, updates, queue depth).
    pub fn train_epoch(&mut self, records: &[TrainingRecord]) -> Result<(f64, usize, usize), PipelineError> {
        self.epoch += 1;
        let batches = Arc::new(self.epoch_batches(records, self.epoch)?);
        let spec = Arc::new(self.config.tree_spec(self.neighbor_count(), self.epoch));
        let temporal = self.model.config.temporal.as_ref().map(|t| (t.activity_edge_type, t.seq_len));
        let query = Arc::clone(&self.query);
        let producer_batches = Arc::clone(&batches);
        let mut stream = prefetch_pipeline(&self.config.prefetch, batches.len(), move |_, i| {
            Ok(prepare_batch(&*query, i, &producer_batches[i], &spec, temporal))
        })?;

        let gradient_step = if self.config.grouping { self.config.gradient_step } else { 1 };
        let n_local = self.config.local_aggregation;
        let lr = self.config.learning_rate * if self.config.lr_scaling { n_local as f64 } else { 1.0 };
        let mut pending: BTreeMap<usize, PreparedBatch> = BTreeMap::new();
        let mut next = 0;
        let mut micro: Vec<Gradients> = Vec::new();
        let mut sizes: Vec<usize> = Vec::new();
        let (mut loss_sum, mut loss_n, mut updates) = (0.0, 0usize, 0usize);

        // consume strictly in batch order so results do not depend on
        // producer scheduling
        for item in stream.by_ref() {
            let p = item?;
            pending.insert(p.index, p);
            while let Some(p) = pending.remove(&next) {
                next += 1;
                self.counters.member_queries += p.member_queries;
                self.counters.item_queries += p.item_queries;
                self.counters.activity_queries += p.activity_queries;
                self.counters.add_tree_stats(&p.stats);
                self.counters.skipped_items += p.failed_items;
                if p.member.is_none() {
                    self.counters.skipped_batches += 1;
                    continue;
                }
                for s in 0..gradient_step {
                    let Some((g, n, loss)) = slice_gradients(&self.model, &p, s, gradient_step)? else {
                        continue;
                    };
                    self.counters.pairs += n;
                    loss_sum += loss;
                    loss_n += 1;
                    micro.push(g);
                    sizes.push(n);
                    if micro.len() == n_local {
                        self.flush(&mut micro, &mut sizes, lr)?;
                        updates += 1;
                    }
                }
            }
        }
        if !micro.is_empty() {
            self.flush(&mut micro, &mut sizes, lr)?;
            updates += 1;
        }
        let depth = stream.stats().max_depth;
        Ok((if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 }, updates, depth))
    }

    fn flush(&mut self, micro: &mut Vec<Gradients>, sizes: &mut Vec<usize>, lr: f64) -> Result<(), PipelineError> {
        let g = if micro.len() == 1 {
            micro.pop().expect("one gradient")
        } else {
            local_gradient_aggregate(micro, sizes, &self.model.params)?
        };
        self.model.apply(&g, lr);
        self.counters.updates += 1;
        micro.clear();
        sizes.clear();
        Ok(())
    }

    /// Runs MLP-init (when configured) and `config.epochs` epochs, writing
    /// one JSON line per epoch to `log`.
    pub fn fit(
        &mut self,
        train: &[TrainingRecord],
        validation: &[TrainingRecord],
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<EpochMetrics>, PipelineError> {
        if let Some(cfg) = self.config.mlp_init.clone() {
            let report = mlp_init(&mut self.model, &*self.query, train, &cfg)?;
            self.counters.sampler_calls += report.sampler_calls;
            info!("mlp-init: {} epochs, final loss {:.4}", report.epochs, report.final_loss);
        }
        let mut out = Vec::new();
        for _ in 0..self.config.epochs {
            let before = self.counters;
            let neighbor_count = self.neighbor_count();
            let (mean_loss, updates, depth) = self.train_epoch(train)?;
            let spec = self.config.tree_spec(neighbor_count, 0);
            let (val_auc, eval_counters) = evaluate(&self.model, &*self.query, validation, &spec)?;
            self.counters.eval_queries += eval_counters.eval_queries;
            let m = EpochMetrics {
                epoch: self.epoch,
                auc: val_auc,
                neighbor_count,
                queue_depth_max: depth,
                ge_queries: (self.counters.member_queries - before.member_queries)
                    + (self.counters.item_queries - before.item_queries),
                neighbors_fetched: self.counters.neighbors_fetched - before.neighbors_fetched,
                mean_loss,
                updates,
            };
            info!(
                "epoch {} loss {:.4} auc {:?} neighbors {} queries {}",
                m.epoch, m.mean_loss, m.auc, m.neighbor_count, m.ge_queries
            );
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &m).map_err(|e| PipelineError::Io(e.into()))?;
                writeln!(w)?;
            }
            if let Some(state) = &self.adaptive {
                let next = adaptive_step(state, val_auc.unwrap_or(0.0))?;
                debug!("adaptive: {} -> {} neighbors", state.current_neighbor_count, next.current_neighbor_count);
                self.adaptive = Some(next);
            }
            out.push(m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregator, ModelConfig};
    use crate::pipeline::engine_query_count;
    use crate::synthetic::{planted_bipartite, power_law_records, BipartiteConfig};

    fn small_dataset() -> crate::synthetic::LinkDataset {
        planted_bipartite(&BipartiteConfig {
            members: 60,
            items: 60,
            communities: 3,
            feature_dim: 4,
            seed: 5,
            ..BipartiteConfig::default()
        })
    }

    fn small_model(g: &crate::graph::HeteroGraph) -> Model {
        let mut c = ModelConfig::new([(0u16, 4usize), (1, 4)].into_iter().collect(), 6, 1);
        c.node_counts = g.node_counts();
        c.id_embeddings = true;
        c.id_dim = 2;
        c.aggregator = Aggregator::Mean;
        Model::new(c, 2).unwrap()
    }

    fn prepared(ds: &crate::synthetic::LinkDataset, group_size: usize) -> Vec<PreparedBatch> {
        let spec = TreeSpec { strategy: NeighborStrategy::Random, fanouts: vec![3], rng_seed: 1 };
        group_and_slice(&ds.train, group_size)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, b)| prepare_batch(&ds.graph, i, b, &spec, None))
            .collect()
    }

    #[test]
    fn one_step_uses_the_mean_masked_loss() {
        let ds = small_dataset();
        let model = small_model(&ds.graph);
        let p = prepared(&ds, 4).into_iter().find(|p| p.batch.real_count() == 4).unwrap();
        let mut stepped = model.clone();
        assert_eq!(grouped_step(&mut stepped, &p, 1, 0.3).unwrap(), 1);
        let (_, g, _) = model.loss_and_grad(&slice_loss(&p, 0..4).unwrap()).unwrap();
        let mut manual = model.clone();
        manual.apply(&g, 0.3);
        assert_eq!(stepped, manual);
    }

    #[test]
    fn full_gradient_step_is_sequential_single_pairs() {
        let ds = small_dataset();
        let model = small_model(&ds.graph);
        let p = prepared(&ds, 4).into_iter().find(|p| p.batch.real_count() == 4).unwrap();
        let mut stepped = model.clone();
        assert_eq!(grouped_step(&mut stepped, &p, 4, 0.3).unwrap(), 4);
        let mut manual = model.clone();
        for i in 0..4 {
            let b = slice_loss(&p, i..i + 1).unwrap();
            assert_eq!(b.pairs.len(), 1);
            assert_eq!(b.pairs[0].dst.node, ds.graph.resolve_ref(p.batch.items[i]).unwrap());
            let (_, g, _) = manual.loss_and_grad(&b).unwrap();
            manual.apply(&g, 0.3);
        }
        assert_eq!(stepped, manual);
        assert!(grouped_step(&mut stepped, &p, 3, 0.3).is_err());
    }

    #[test]
    fn padded_slots_do_not_change_the_loss() {
        let ds = small_dataset();
        let model = small_model(&ds.graph);
        // 8 records per member; keeping 6 leaves a second batch with 2 pads
        let positives: Vec<TrainingRecord> = ds.train.iter().filter(|r| r.member.node_id == 3).copied().collect();
        let batches = group_and_slice(&positives[..6], 4).unwrap();
        assert_eq!(batches[1].real_count(), 2);
        let spec = TreeSpec { strategy: NeighborStrategy::Random, fanouts: vec![3], rng_seed: 1 };
        let p = prepare_batch(&ds.graph, 0, &batches[1], &spec, None);
        let padded = slice_loss(&p, 0..4).unwrap();
        let real = slice_loss(&p, 0..2).unwrap();
        let (a, b) = (model.loss(&padded).unwrap(), model.loss(&real).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn instrumented_queries_match_the_closed_form() {
        let ds = small_dataset();
        let records: Vec<TrainingRecord> = power_law_records(300, 60, 60, 1.1, 4)
            .into_iter()
            .filter(|r| ds.graph.contains(r.member) && ds.graph.contains(r.item))
            .collect();
        let (before, after) = engine_query_count(&records, 4).unwrap();
        for (grouping, want) in [(false, before), (true, after)] {
            let cfg = TrainerConfig { epochs: 1, grouping, neighbors: 2, ..TrainerConfig::default() };
            let mut t = Trainer::new(small_model(&ds.graph), Arc::new(ds.graph.clone()), cfg).unwrap();
            t.train_epoch(&records).unwrap();
            assert_eq!(t.counters.member_queries, want.member_queries);
            assert_eq!(t.counters.item_queries, want.item_queries);
        }
    }

    #[test]
    fn producer_count_does_not_change_training() {
        let ds = small_dataset();
        let g = Arc::new(ds.graph.clone());
        let run = |producers: usize| {
            let cfg = TrainerConfig {
                epochs: 2,
                neighbors: 3,
                prefetch: PrefetchConfig { capacity: 2, producers },
                ..TrainerConfig::default()
            };
            let mut t = Trainer::new(small_model(&ds.graph), Arc::clone(&g), cfg).unwrap();
            let m = t.fit(&ds.train, &ds.validation, None).unwrap();
            (t.model, m.last().unwrap().auc)
        };
        let (a, auc_a) = run(1);
        let (b, auc_b) = run(4);
        assert_eq!(a, b);
        assert_eq!(auc_a, auc_b);
    }

    #[test]
    fn metrics_log_has_one_line_per_epoch() {
        let ds = small_dataset();
        let cfg = TrainerConfig { epochs: 3, neighbors: 2, ..TrainerConfig::default() };
        let mut t = Trainer::new(small_model(&ds.graph), Arc::new(ds.graph.clone()), cfg).unwrap();
        let mut log = Vec::new();
        t.fit(&ds.train, &ds.validation, Some(&mut log)).unwrap();
        let lines: Vec<serde_json::Value> =
            String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        for (k, l) in lines.iter().enumerate() {
            assert_eq!(l["epoch"], k + 1);
            for key in ["auc", "neighbor_count", "queue_depth_max", "ge_queries"] {
                assert!(l.get(key).is_some(), "{key}");
            }
        }
    }

    #[test]
    fn local_aggregation_of_one_batch_is_the_plain_step() {
        let ds = small_dataset();
        let records = &ds.train[..8];
        let run = |n: usize| {
            let cfg = TrainerConfig { epochs: 1, neighbors: 2, local_aggregation: n, ..TrainerConfig::default() };
            let mut t = Trainer::new(small_model(&ds.graph), Arc::new(ds.graph.clone()), cfg).unwrap();
            t.train_epoch(records).unwrap();
            t
        };
        let plain = run(1);
        let aggregated = run(100);
        assert_eq!(aggregated.counters.updates, 1);
        assert!(plain.counters.updates > 1);
        assert_ne!(plain.model, aggregated.model);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let ds = small_dataset();
        let g = Arc::new(ds.graph.clone());
        for cfg in [
            TrainerConfig { gradient_step: 3, ..TrainerConfig::default() },
            TrainerConfig { group_size: 0, ..TrainerConfig::default() },
            TrainerConfig { local_aggregation: 0, ..TrainerConfig::default() },
            TrainerConfig { learning_rate: -1.0, ..TrainerConfig::default() },
        ] {
            assert!(Trainer::new(small_model(&ds.graph), Arc::clone(&g), cfg).is_err());
        }
    }
}
