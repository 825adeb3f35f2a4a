use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{activity_positions, long_term_target_pairs, temporal_mask};
use super::tape::{Gradients, ParamStore, Tape, Var};
use super::tensor::Tensor;
use super::tree::{Activity, TreeNode};
use super::{Aggregator, DecoderKind, EncoderMode, ModelConfig, ModelError};
use crate::graph::NodeRef;

/// Which tower encodes a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Source,
    Destination,
}

/// A source node with its compute tree and, for temporal models, its
/// recent activities (oldest first).
#[derive(Clone, Debug, PartialEq)]
pub struct SourceInput {
    pub tree: TreeNode,
    pub activities: Vec<Activity>,
    /// Reference time for timestamp positions.
    pub query_ts: i64,
}

impl SourceInput {
    pub fn new(tree: TreeNode) -> Self {
        Self { tree, activities: Vec::new(), query_ts: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairInput {
    /// Index into [`Batch::sources`].
    pub source: usize,
    pub dst: TreeNode,
    pub label: f64,
    /// `false` for padded slots, which contribute nothing.
    pub mask: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub sources: Vec<SourceInput>,
    pub pairs: Vec<PairInput>,
}

impl Batch {
    pub fn real_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| p.mask).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Nodes encoded with zero features because none were available.
    pub missing_features: usize,
    /// Aggregations over an empty neighborhood.
    pub empty_neighborhoods: usize,
    /// Long-term loss terms included.
    pub long_term_terms: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let s = config.init_scale;
        let dense = |params: &mut ParamStore, rng: &mut ChaCha8Rng, name: String, rows: usize, cols: usize| {
            let bound = s / (cols.max(1) as f64).sqrt();
            params.insert(name, uniform(rng, rows, cols, bound));
        };
        let h = config.hidden_dim;
        for prefix in Self::prefixes(&config) {
            for (t, dim) in &config.feature_dims {
                dense(&mut params, &mut rng, format!("{prefix}proj.{t}.w"), h, *dim);
                params.insert(format!("{prefix}proj.{t}.b"), uniform(&mut rng, h, 1, 0.1 * s));
                if config.id_embeddings {
                    let n = config.node_counts[t];
                    params.insert(format!("{prefix}id.{t}"), uniform(&mut rng, n, config.id_dim, 0.1 * s));
                }
            }
            for l in 0..config.layers {
                let din = if l == 0 { config.base_dim() } else { h };
                dense(&mut params, &mut rng, format!("{prefix}layer{l}.w"), h, 2 * din);
                params.insert(format!("{prefix}layer{l}.b"), uniform(&mut rng, h, 1, 0.1 * s));
                if config.aggregator != Aggregator::Mean {
                    // small attention weights start close to mean pooling
                    params.insert(format!("{prefix}layer{l}.wq"), uniform(&mut rng, h, din, 0.1 * s));
                    params.insert(format!("{prefix}layer{l}.wk"), uniform(&mut rng, h, din, 0.1 * s));
                }
            }
        }
        if let Some(t) = &config.temporal {
            let d = t.token_dim;
            dense(&mut params, &mut rng, "temporal.act.w".into(), d, config.base_dim());
            params.insert("temporal.act.b", uniform(&mut rng, d, 1, 0.1 * s));
            for name in ["wq", "wk"] {
                params.insert(format!("temporal.{name}"), uniform(&mut rng, d, d, 0.1 * s));
            }
            params.insert("temporal.wv", identity_plus_noise(&mut rng, d, 0.1 * s));
        }
        if let DecoderKind::Mlp { hidden } = &config.decoder {
            let mut din = 3 * config.output_dim();
            for (i, width) in hidden.iter().enumerate() {
                dense(&mut params, &mut rng, format!("dec.mlp{i}.w"), *width, din);
                params.insert(format!("dec.mlp{i}.b"), Tensor::zeros(*width, 1));
                din = *width;
            }
            dense(&mut params, &mut rng, "dec.out.w".into(), 1, din);
            params.insert("dec.out.b", Tensor::zeros(1, 1));
        }
        Ok(Self { config, params })
    }

    fn prefixes(config: &ModelConfig) -> Vec<&'static str> {
        match config.encoder {
            EncoderMode::Single => vec!["enc."],
            EncoderMode::Dual => vec!["src.", "dst."],
        }
    }

    pub fn prefix(&self, role: Role) -> &'static str {
        match (self.config.encoder, role) {
            (EncoderMode::Single, _) => "enc.",
            (EncoderMode::Dual, Role::Source) => "src.",
            (EncoderMode::Dual, Role::Destination) => "dst.",
        }
    }

    /// Parameters owned by one tower (names starting with its prefix).
    pub fn tower_param_count(&self, role: Role) -> usize {
        let prefix = self.prefix(role);
        self.params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// Mean loss of a batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        let mut tape = Tape::new(&self.params);
        let (loss, _) = self.forward(&mut tape, batch)?;
        Ok(tape.scalar(loss))
    }

    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Gradients, ForwardStats), ModelError> {
        let mut tape = Tape::new(&self.params);
        let (loss, stats) = self.forward(&mut tape, batch)?;
        Ok((tape.scalar(loss), tape.backward(loss), stats))
    }

    pub fn apply(&mut self, grads: &Gradients, lr: f64) {
        self.params.apply(grads, lr);
    }

    /// Records the batch loss on `tape`: masked mean of the pair loss plus
    /// the weighted long-term loss averaged over sources that have one.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<(Var, ForwardStats), ModelError> {
        let mut cx = Ctx { model: self, stats: ForwardStats::default(), memo: HashMap::new() };
        let real: Vec<&PairInput> = batch.pairs.iter().filter(|p| p.mask).collect();
        if let Some(p) = real.iter().find(|p| p.source >= batch.sources.len()) {
            return Err(ModelError::Config(format!("pair refers to source {}", p.source)));
        }

        let per_pair_source = self.config.temporal.as_ref().is_some_and(|t| t.use_dst_neighbors);
        let mut shared: HashMap<usize, Var> = HashMap::new();
        let mut src_vars = Vec::with_capacity(real.len());
        let mut long_terms: Vec<Var> = Vec::new();
        for p in &real {
            if !per_pair_source {
                if let Some(u) = shared.get(&p.source) {
                    src_vars.push(*u);
                    continue;
                }
            }
            let (u, lt) = cx.source_embedding(tape, &batch.sources[p.source], per_pair_source.then_some(&p.dst))?;
            long_terms.extend(lt);
            shared.insert(p.source, u);
            src_vars.push(u);
        }
        let dst_vars: Vec<Var> = real.iter().map(|p| cx.encode_root(tape, Role::Destination, &p.dst)).collect();

        let pair_loss = match &self.config.decoder {
            DecoderKind::InBatch => {
                let pos: Vec<usize> = (0..real.len()).filter(|i| real[*i].label > 0.5).collect();
                if pos.len() < 2 {
                    None
                } else {
                    let us: Vec<Var> = pos.iter().map(|i| src_vars[*i]).collect();
                    let vs: Vec<Var> = pos.iter().map(|i| dst_vars[*i]).collect();
                    let u = tape.hstack(&us);
                    let v = tape.hstack(&vs);
                    let ut = tape.transpose(u);
                    let logits = tape.matmul(ut, v);
                    let logits = tape.scale(logits, 1.0 / self.config.temperature);
                    Some(tape.softmax_xent(logits, (0..pos.len()).collect()))
                }
            }
            _ => {
                if real.is_empty() {
                    None
                } else {
                    let mut terms = Vec::with_capacity(real.len());
                    for (i, p) in real.iter().enumerate() {
                        let s = cx.logit(tape, src_vars[i], dst_vars[i]);
                        terms.push(tape.bce_with_logits(s, p.label));
                    }
                    let stacked = tape.vstack(&terms);
                    let total = tape.sum(stacked);
                    Some(tape.scale(total, 1.0 / real.len() as f64))
                }
            }
        };

        let long_term = match (&self.config.temporal, long_terms.is_empty()) {
            (Some(t), false) if t.long_term_weight > 0.0 => {
                let stacked = tape.vstack(&long_terms);
                let total = tape.sum(stacked);
                Some(tape.scale(total, t.long_term_weight / long_terms.len() as f64))
            }
            _ => None,
        };
        cx.stats.long_term_terms = long_terms.len();
        let loss = match (pair_loss, long_term) {
            (Some(a), Some(b)) => tape.add(a, b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => tape.constant(Tensor::scalar(0.0)),
        };
        Ok((loss, cx.stats))
    }

    /// Source embedding (temporal sequence applied when configured).
    pub fn embed_source(&self, source: &SourceInput, dst: Option<&TreeNode>) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let mut cx = Ctx { model: self, stats: ForwardStats::default(), memo: HashMap::new() };
        let (u, _) = cx.source_embedding(&mut tape, source, dst)?;
        Ok(tape.value(u).data.clone())
    }

    /// Plain tower output for a compute tree.
    pub fn embed_tree(&self, role: Role, tree: &TreeNode) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let mut cx = Ctx { model: self, stats: ForwardStats::default(), memo: HashMap::new() };
        let v = cx.encode_root(&mut tape, role, tree);
        tape.value(v).data.clone()
    }

    /// Decoder logit for a pair of embeddings.
    pub fn score(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut tape = Tape::new(&self.params);
        let mut cx = Ctx { model: self, stats: ForwardStats::default(), memo: HashMap::new() };
        let uu = tape.constant(Tensor::column(u.to_vec()));
        let vv = tape.constant(Tensor::column(v.to_vec()));
        let s = cx.logit(&mut tape, uu, vv);
        tape.scalar(s)
    }
}

fn identity_plus_noise(rng: &mut ChaCha8Rng, d: usize, noise: f64) -> Tensor {
    let mut t = uniform(rng, d, d, noise);
    for i in 0..d {
        t.set(i, i, t.get(i, i) + 1.0);
    }
    t
}

struct Ctx<'m> {
    model: &'m Model,
    stats: ForwardStats,
    /// (role, tree node address, level) → encoding.
    memo: HashMap<(Role, usize, usize), Var>,
}

impl Ctx<'_> {
    fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Layer-0 representation: projected features, optionally followed by
    /// the node's ID embedding.
    fn base(&mut self, tape: &mut Tape, role: Role, node: NodeRef, features: Option<&Vec<f64>>) -> Var {
        let prefix = self.model.prefix(role);
        let cfg = &self.model.config;
        let dim = cfg.feature_dims.get(&node.node_type).copied().unwrap_or(0);
        let h = cfg.hidden_dim;
        let x = match features {
            Some(f) if f.len() == dim && cfg.feature_dims.contains_key(&node.node_type) => f.clone(),
            _ => {
                self.stats.missing_features += 1;
                vec![0.0; dim]
            }
        };
        let projected = match tape.params().id(&format!("{prefix}proj.{}.w", node.node_type)) {
            Some(wid) => {
                let w = tape.param(wid);
                let b = tape.param_named(&format!("{prefix}proj.{}.b", node.node_type));
                let xv = tape.constant(Tensor::column(x));
                tape.affine(w, xv, b)
            }
            None => tape.constant(Tensor::zeros(h, 1)),
        };
        if !cfg.id_embeddings {
            return projected;
        }
        let table = tape.params().id(&format!("{prefix}id.{}", node.node_type));
        let rows = cfg.node_counts.get(&node.node_type).copied().unwrap_or(0);
        let id = match table {
            Some(tid) if node.is_resolved() && (node.index as usize) < rows => tape.param_row(tid, node.index as usize),
            _ => tape.constant(Tensor::zeros(cfg.id_dim, 1)),
        };
        tape.vstack(&[projected, id])
    }

    fn encode(&mut self, tape: &mut Tape, role: Role, tree: &TreeNode, level: usize) -> Var {
        let key = (role, tree as *const TreeNode as usize, level);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let out = if level == 0 {
            self.base(tape, role, tree.node, tree.features.as_ref())
        } else {
            let center = self.encode(tape, role, tree, level - 1);
            let kids: Vec<Var> = tree.children.iter().map(|c| self.encode(tape, role, c, level - 1)).collect();
            let weights: Vec<f64> = tree.children.iter().map(|c| c.weight).collect();
            let agg = self.aggregate(tape, role, level - 1, center, &kids, &weights);
            let prefix = self.model.prefix(role);
            let w = tape.param_named(&format!("{prefix}layer{}.w", level - 1));
            let b = tape.param_named(&format!("{prefix}layer{}.b", level - 1));
            let cat = tape.vstack(&[center, agg]);
            let z = tape.affine(w, cat, b);
            tape.tanh(z)
        };
        self.memo.insert(key, out);
        out
    }

    fn encode_root(&mut self, tape: &mut Tape, role: Role, tree: &TreeNode) -> Var {
        let layers = self.config().layers;
        self.encode(tape, role, tree, layers)
    }

    fn aggregate(&mut self, tape: &mut Tape, role: Role, layer: usize, center: Var, kids: &[Var], weights: &[f64]) -> Var {
        let agg = self.config().aggregator;
        let dim = tape.value(center).rows;
        if kids.is_empty() && agg != Aggregator::SelfAttention {
            self.stats.empty_neighborhoods += 1;
            return match agg {
                Aggregator::Mean => tape.constant(Tensor::zeros(dim, 1)),
                _ => center,
            };
        }
        match agg {
            Aggregator::Mean => {
                let m = tape.hstack(kids);
                let w: Vec<f64> = if self.config().weighted_mean && weights.iter().sum::<f64>() > 0.0 {
                    let total: f64 = weights.iter().sum();
                    weights.iter().map(|x| x / total).collect()
                } else {
                    vec![1.0 / kids.len() as f64; kids.len()]
                };
                let wv = tape.constant(Tensor::column(w));
                tape.matmul(m, wv)
            }
            Aggregator::Attention | Aggregator::SelfAttention => {
                let mut set = Vec::with_capacity(kids.len() + 1);
                if agg == Aggregator::SelfAttention {
                    set.push(center);
                }
                set.extend_from_slice(kids);
                let prefix = self.model.prefix(role);
                let wq = tape.param_named(&format!("{prefix}layer{layer}.wq"));
                let wk = tape.param_named(&format!("{prefix}layer{layer}.wk"));
                let m = tape.hstack(&set);
                let q = tape.matmul(wq, center);
                let k = tape.matmul(wk, m);
                let qt = tape.transpose(q);
                let scores = tape.matmul(qt, k);
                let scale = 1.0 / (tape.value(q).rows as f64).sqrt();
                let scores = tape.scale(scores, scale);
                let n = set.len();
                let alpha = tape.masked_softmax_rows(scores, vec![true; n]);
                let at = tape.transpose(alpha);
                tape.matmul(m, at)
            }
        }
    }

    /// Decoder logit.
    fn logit(&mut self, tape: &mut Tape, u: Var, v: Var) -> Var {
        let inv_t = 1.0 / self.config().temperature;
        match &self.config().decoder {
            DecoderKind::Cosine => {
                let c = tape.cosine(u, v);
                tape.scale(c, inv_t)
            }
            DecoderKind::InBatch => {
                let ut = tape.transpose(u);
                let d = tape.matmul(ut, v);
                tape.scale(d, inv_t)
            }
            DecoderKind::Mlp { hidden } => {
                let uv = tape.mul(u, v);
                let mut x = tape.vstack(&[u, v, uv]);
                for i in 0..hidden.len() {
                    let w = tape.param_named(&format!("dec.mlp{i}.w"));
                    let b = tape.param_named(&format!("dec.mlp{i}.b"));
                    let z = tape.affine(w, x, b);
                    x = tape.tanh(z);
                }
                let w = tape.param_named("dec.out.w");
                let b = tape.param_named("dec.out.b");
                tape.affine(w, x, b)
            }
        }
    }

    /// Source tower output; with a temporal config, the flattened first `H`
    /// attention outputs, plus the long-term loss term when defined.
    fn source_embedding(
        &mut self,
        tape: &mut Tape,
        source: &SourceInput,
        dst: Option<&TreeNode>,
    ) -> Result<(Var, Option<Var>), ModelError> {
        let sage = self.encode_root(tape, Role::Source, &source.tree);
        let Some(tc) = self.config().temporal.clone() else {
            return Ok((sage, None));
        };
        let (h, d, n) = (tc.heads, tc.token_dim, tc.seq_len);

        // activity list: real activities, then destination neighbors
        let mut acts: Vec<(NodeRef, Option<&Vec<f64>>, i64)> =
            source.activities.iter().map(|a| (a.node, a.features.as_ref(), a.timestamp)).collect();
        if let Some(dst) = dst {
            acts.extend(dst.children.iter().map(|c| (c.node, c.features.as_ref(), source.query_ts)));
        }
        let skip = acts.len().saturating_sub(n);
        let acts = &acts[skip..];
        let pad = n - acts.len();
        let ages: Vec<i64> = acts.iter().map(|a| source.query_ts - a.2).collect();
        let positions = activity_positions(&tc, pad, &ages)?;

        let mut columns: Vec<Var> = (0..h).map(|i| tape.slice_rows(sage, i * d, (i + 1) * d)).collect();
        let zero = tape.constant(Tensor::zeros(d, 1));
        columns.extend(std::iter::repeat(zero).take(pad));
        let aw = tape.param_named("temporal.act.w");
        let ab = tape.param_named("temporal.act.b");
        for (k, (node, features, _)) in acts.iter().enumerate() {
            let base = self.base(tape, Role::Source, *node, *features);
            let tok = tape.affine(aw, base, ab);
            let pos = tape.constant(Tensor::column(positions.col(pad + k)));
            columns.push(tape.add(tok, pos));
        }
        let x = tape.hstack(&columns);
        let mask = temporal_mask(&tc, pad);
        let wq = tape.param_named("temporal.wq");
        let wk = tape.param_named("temporal.wk");
        let wv = tape.param_named("temporal.wv");
        let q = tape.matmul(wq, x);
        let k = tape.matmul(wk, x);
        let v = tape.matmul(wv, x);
        let qt = tape.transpose(q);
        let scores = tape.matmul(qt, k);
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = tape.masked_softmax_rows(scores, mask.allowed);
        let at = tape.transpose(attn);
        let out = tape.matmul(v, at);

        let heads: Vec<Var> = (0..h).map(|i| tape.col(out, i)).collect();
        let member = tape.vstack(&heads);

        let pairs = long_term_target_pairs(&tc);
        let mut terms = Vec::new();
        if let Some((pred, _)) = pairs.first() {
            if *pred >= pad {
                let p = tape.col(out, h + pred);
                for (_, t) in pairs.iter().filter(|(_, t)| *t >= pad) {
                    let target = tape.col(x, h + t);
                    let c = tape.cosine(p, target);
                    terms.push(c);
                }
            }
        }
        let long_term = if terms.is_empty() {
            None
        } else {
            // mean of (1 − cos)
            let stacked = tape.vstack(&terms);
            let total = tape.sum(stacked);
            let mean = tape.scale(total, -1.0 / terms.len() as f64);
            let one = tape.constant(Tensor::scalar(1.0));
            Some(tape.add(one, mean))
        };
        Ok((member, long_term))
    }
}
