use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphQuery, PipelineError, TrainingRecord};
use crate::graph::NodeRef;
use crate::model::{Batch, DecoderKind, Model, PairInput, SourceInput, TreeNode, TreeSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpInitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpInitConfig {
    fn default() -> Self {
        Self { epochs: 3, learning_rate: 0.1, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MlpInitReport {
    pub epochs: usize,
    pub updates: usize,
    /// Sampler invocations made while fetching features (always 0: only
    /// root features are read).
    pub sampler_calls: usize,
    pub final_loss: f64,
}

fn is_feature_param(name: &str) -> bool {
    let rest = name.split_once('.').map_or(name, |(_, r)| r);
    rest.starts_with("proj.") || rest.starts_with("id.")
}

/// Trains the projection (and ID) parameters of `model` as a zero-hop
/// two-tower link predictor on node features alone, then writes them back.
/// Aggregation, temporal and decoder parameters are left untouched.
pub fn mlp_init<Q: GraphQuery + ?Sized>(
    model: &mut Model,
    query: &Q,
    records: &[TrainingRecord],
    config: &MlpInitConfig,
) -> Result<MlpInitReport, PipelineError> {
    let mut report = MlpInitReport { epochs: config.epochs, ..MlpInitReport::default() };
    if config.epochs == 0 || records.is_empty() {
        return Ok(report);
    }
    if config.batch_size == 0 {
        return Err(PipelineError::Config("mlp-init batch size must be at least 1".into()));
    }
    let mut cfg = model.config.clone();
    cfg.layers = 0;
    cfg.temporal = None;
    cfg.decoder = DecoderKind::Cosine;
    let mut tower = Model::new(cfg, config.seed)?;
    for (name, t) in model.params.iter() {
        if is_feature_param(name) {
            tower.params.assign(name, t.clone())?;
        }
    }

    let mut nodes: Vec<NodeRef> = records.iter().flat_map(|r| [r.member, r.item]).collect();
    nodes.sort();
    nodes.dedup();
    let spec = TreeSpec { strategy: crate::model::NeighborStrategy::Random, fanouts: Vec::new(), rng_seed: 0 };
    let (leaves, stats) = query.trees(&nodes, &spec);
    report.sampler_calls = stats.sampler_calls;
    let leaves: HashMap<NodeRef, TreeNode> =
        nodes.iter().zip(leaves).filter_map(|(n, t)| t.ok().map(|t| (*n, t))).collect();
    let usable: Vec<&TrainingRecord> =
        records.iter().filter(|r| leaves.contains_key(&r.member) && leaves.contains_key(&r.item)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                sources: chunk.iter().map(|i| SourceInput::new(leaves[&usable[*i].member].clone())).collect(),
                pairs: chunk
                    .iter()
                    .enumerate()
                    .map(|(k, i)| PairInput { source: k, dst: leaves[&usable[*i].item].clone(), label: usable[*i].label, mask: true })
                    .collect(),
            };
            let (loss, g, _) = tower.loss_and_grad(&batch)?;
            tower.apply(&g, config.learning_rate);
            report.updates += 1;
            total += loss;
            count += 1;
        }
        report.final_loss = if count > 0 { total / count as f64 } else { 0.0 };
    }

    for (name, t) in tower.params.iter() {
        if is_feature_param(name) {
            model.params.assign(name, t.clone())?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeKind, GraphBuilder, Schema};
    use crate::metrics::auc;
    use crate::model::{ModelConfig, Role};
    use rand::Rng;

    /// Members and items carry a ±1 class in their first feature; positives
    /// share the class.
    fn separable(n: usize, seed: u64) -> (crate::graph::HeteroGraph, Vec<TrainingRecord>, Vec<TrainingRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new(Schema::new().with_edge_type(1, EdgeKind::Engagement));
        let class = |id: usize| if id % 2 == 0 { 1.0 } else { -1.0 };
        for id in 0..n {
            for t in 0..2u16 {
                let f = vec![class(id) + rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                b.add_node(t, id as u64, f);
            }
        }
        let mut records = Vec::new();
        for k in 0..8 * n {
            let m = rng.gen_range(0..n);
            let i = rng.gen_range(0..n);
            let label = f64::from(u8::from(class(m) == class(i)));
            records.push(TrainingRecord { member: NodeRef::key(0, m as u64), item: NodeRef::key(1, i as u64), label, timestamp: k as i64 });
        }
        let validation = records.split_off(6 * n);
        (b.finish().0, records, validation)
    }

    fn model() -> Model {
        let mut c = ModelConfig::new([(0u16, 3usize), (1, 3)].into_iter().collect(), 4, 2);
        c.encoder = crate::model::EncoderMode::Dual;
        Model::new(c, 9).unwrap()
    }

    #[test]
    fn zero_epochs_keep_the_random_init() {
        let (g, train, _) = separable(20, 1);
        let mut m = model();
        let before = m.clone();
        let r = mlp_init(&mut m, &g, &train, &MlpInitConfig { epochs: 0, ..MlpInitConfig::default() }).unwrap();
        assert_eq!(m, before);
        assert_eq!(r.updates, 0);
    }

    #[test]
    fn learns_a_separable_task_without_sampling() {
        let (g, train, validation) = separable(100, 2);
        let mut m = model();
        let before = m.clone();
        let r = mlp_init(&mut m, &g, &train, &MlpInitConfig { epochs: 10, learning_rate: 0.5, ..MlpInitConfig::default() })
            .unwrap();
        assert_eq!(r.sampler_calls, 0);
        // only feature parameters move, and each tower's own node type does
        for (name, t) in m.params.iter() {
            let moved = before.params.by_name(name).unwrap() != t;
            if moved {
                assert!(is_feature_param(name), "{name}");
            }
        }
        for name in ["src.proj.0.w", "dst.proj.1.w"] {
            assert_ne!(before.params.by_name(name), m.params.by_name(name), "{name}");
        }
        let mut zero_hop = m.config.clone();
        zero_hop.layers = 0;
        let mut probe = Model::new(zero_hop, 0).unwrap();
        for (name, t) in m.params.iter().filter(|(n, _)| is_feature_param(n)) {
            probe.params.assign(name, t.clone()).unwrap();
        }
        let leaf = |n: NodeRef| TreeNode::leaf(n, g.features(g.resolve_ref(n).unwrap()).map(|f| f.to_vec()));
        let scores: Vec<f64> = validation
            .iter()
            .map(|r| {
                let u = probe.embed_tree(crate::model::Role::Source, &leaf(r.member));
                let v = probe.embed_tree(Role::Destination, &leaf(r.item));
                probe.score(&u, &v)
            })
            .collect();
        let labels: Vec<bool> = validation.iter().map(|r| r.label > 0.5).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!(a > 0.9, "auc {a}");
    }
}
