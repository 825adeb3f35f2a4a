use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use lignn_core::densify::{densify as run_densify, DensifyConfig, EmbeddingTable};
use lignn_core::graph::{build_graph, Schema};
use lignn_core::model::{
    load_checkpoint, save_checkpoint, Aggregator, DecoderKind, EncoderMode, MaskMode, Model, ModelConfig,
    NeighborStrategy, PositionMode, TemporalConfig,
};
use lignn_core::pipeline::{
    engine_query_count, read_records, write_records, AdaptiveConfig, GraphQuery, MlpInitConfig, PrefetchConfig, Trainer,
    TrainerConfig, TrainingRecord,
};
use lignn_core::samplers::{ppr_forward_push, ppr_forward_push_batch, PprConfig, WalkConfig};
use lignn_core::synthetic::{
    planted_bipartite, planted_temporal, power_law_records, BipartiteConfig, LinkDataset, TemporalDatasetConfig,
};
use lignn_core::{HeteroGraph, NodeRef};
use lignn_engine::nearline::EventKind;
use lignn_engine::wire::{Body, Request, SampleParams, SampleResult};
use lignn_engine::{
    fan_out_sample, partition_of, serve as serve_shard, EmbeddingStore, EngineClient, EpochGraph, NearlineConfig,
    NearlineRefresher, PartitionMap, RetryPolicy, ShardState,
};

use crate::{
    AggregatorArg, BenchArgs, BuildArgs, DecoderArg, DensifyArgs, EncoderArg, GraphArgs, MaskArg, ModelArgs, PosArg,
    RefreshArgs, SampleArgs, SamplerArg, ServeArgs, StrategyArg, SyntheticKind, TrainArgs,
};

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_schema(args: &GraphArgs) -> Result<Schema> {
    let path = args.schema.as_ref().ok_or_else(|| anyhow!("--schema is required"))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Schema::parse(&text)?)
}

fn load_graph(args: &GraphArgs) -> Result<HeteroGraph> {
    let schema = read_schema(args)?;
    let edges_path = args.edges.as_ref().ok_or_else(|| anyhow!("--edges is required"))?;
    let edges = open(edges_path)?;
    let (graph, report) = match &args.nodes {
        Some(p) => build_graph(edges, open(p)?, schema)?,
        None => build_graph(edges, io::empty(), schema)?,
    };
    if report.rejected_count() > 0 {
        warn!("{} input rows rejected", report.rejected_count());
    }
    info!("graph: {} nodes, {} edges", graph.total_node_count(), graph.edge_count());
    Ok(graph)
}

fn addresses(engine: &[String]) -> Result<Vec<SocketAddr>> {
    engine
        .iter()
        .map(|a| a.to_socket_addrs()?.next().ok_or_else(|| io::Error::other(format!("cannot resolve {a}"))))
        .collect::<io::Result<_>>()
        .context("resolving --engine addresses")
}

fn client(engine: &[String]) -> Result<EngineClient> {
    Ok(EngineClient::new(PartitionMap::new(addresses(engine)?)?, RetryPolicy::default())?)
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_dataset(dir: &Path, data: &LinkDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("schema.txt"), data.graph.schema().to_text())?;
    let mut w = create(&dir.join("edges.tsv"))?;
    data.graph.dump_edges(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("nodes.tsv"))?;
    data.graph.dump_nodes(&mut w)?;
    w.flush()?;
    write_records(&data.train, create(&dir.join("train.tsv"))?)?;
    write_records(&data.validation, create(&dir.join("validation.tsv"))?)?;
    Ok(())
}

pub fn build(a: BuildArgs) -> Result<()> {
    if let Some(kind) = a.synthetic {
        let dir = a.out.as_ref().ok_or_else(|| anyhow!("--out is required with --synthetic"))?;
        let data = match kind {
            SyntheticKind::Bipartite => planted_bipartite(&BipartiteConfig {
                members: a.members,
                items: a.items,
                communities: a.communities,
                seed: a.seed,
                ..BipartiteConfig::default()
            }),
            SyntheticKind::Temporal => planted_temporal(&TemporalDatasetConfig {
                members: a.members,
                items: a.items,
                communities: a.communities,
                seed: a.seed,
                ..TemporalDatasetConfig::default()
            }),
        };
        write_dataset(dir, &data)?;
        return print_json(&json!({
            "out": dir,
            "node_counts": data.graph.node_counts(),
            "edge_counts": data.graph.edge_counts(),
            "train_records": data.train.len(),
            "validation_records": data.validation.len(),
        }));
    }

    let schema = read_schema(&a.graph)?;
    let edges = open(a.graph.edges.as_ref().ok_or_else(|| anyhow!("--edges is required"))?)?;
    let (graph, report) = match &a.graph.nodes {
        Some(p) => build_graph(edges, open(p)?, schema)?,
        None => build_graph(edges, io::empty(), schema)?,
    };
    graph.check_invariants().map_err(|e| anyhow!("graph invariant violated: {e}"))?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("schema.txt"), graph.schema().to_text())?;
        let mut w = create(&dir.join("edges.tsv"))?;
        graph.dump_edges(&mut w)?;
        w.flush()?;
        let mut w = create(&dir.join("nodes.tsv"))?;
        graph.dump_nodes(&mut w)?;
        w.flush()?;
    }
    print_json(&serde_json::to_value(&report)?)
}

pub fn densify(a: DensifyArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let table = EmbeddingTable::read(open(&a.embeddings)?)?;
    let cfg = DensifyConfig {
        lower_quantile: a.lower_q,
        upper_quantile: a.upper_q,
        k: a.k,
        edge_type: a.edge_type,
        degree_edge_types: (!a.degree_edge_types.is_empty()).then(|| a.degree_edge_types.clone()),
    };
    let out = run_densify(&graph, &table, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    let mut w = create(&a.out.join("artificial_edges.tsv"))?;
    for (low, high, _) in &out.edges {
        writeln!(w, "{}\t{}\t{}\t{}\t{}\t1\t0", low.node_type, low.node_id, a.edge_type, high.node_type, high.node_id)?;
    }
    w.flush()?;
    let mut w = create(&a.out.join("densify_skipped.jsonl"))?;
    for s in &out.skipped {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    w.flush()?;
    print_json(&json!({
        "low_threshold": out.low_threshold,
        "high_threshold": out.high_threshold,
        "low_nodes": out.low_count,
        "high_nodes": out.high_count,
        "artificial_edges": out.edges.len(),
        "skipped": out.skipped.len(),
    }))
}

fn parse_node(s: &str) -> Option<NodeRef> {
    let (t, id) = s.split_once('\t').or_else(|| s.split_once(':'))?;
    Some(NodeRef::key(t.trim().parse().ok()?, id.trim().parse().ok()?))
}

fn read_seeds(path: &Path) -> Result<Vec<NodeRef>> {
    let mut seeds = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        seeds.push(parse_node(line).ok_or_else(|| anyhow!("{} line {}: bad seed {line:?}", path.display(), i + 1))?);
    }
    Ok(seeds)
}

fn sample_params(a: &SampleArgs) -> Result<SampleParams> {
    Ok(match a.strategy {
        StrategyArg::Random => SampleParams::Random { fanouts: a.fanout.clone(), rng_seed: a.rng_seed },
        StrategyArg::Weighted => {
            let mut multipliers = BTreeMap::new();
            for m in &a.multipliers {
                let (t, f) = m.split_once('=').ok_or_else(|| anyhow!("multiplier {m:?} is not type=factor"))?;
                multipliers.insert(t.trim().parse::<u16>()?, f.trim().parse::<f64>()?);
            }
            SampleParams::Weighted { fanouts: a.fanout.clone(), multipliers, rng_seed: a.rng_seed }
        }
        StrategyArg::PprPush => SampleParams::PprPush { alpha: a.alpha, r_max: a.rmax, top_k: a.topk },
        StrategyArg::PprTwoHop => {
            SampleParams::PprTwoHop { alpha: a.alpha, walks: a.walks, top_k: a.topk, rng_seed: a.rng_seed }
        }
        StrategyArg::Temporal => SampleParams::Temporal { edge_type: a.edge_type, before_ts: a.before_ts, n: a.topk },
    })
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let seeds = read_seeds(&a.seeds)?;
    let params = sample_params(&a)?;
    let results: Vec<SampleResult> = if a.engine.is_empty() {
        let state = ShardState::new(Arc::new(EpochGraph::new(load_graph(&a.graph)?)), 0, 1)?;
        seeds
            .iter()
            .map(|seed| match state.handle(&Request::SampleNeighbors { seed: *seed, params: params.clone() }).body {
                Body::Samples(mut s) if s.len() == 1 => s.pop().expect("one result"),
                Body::Error(e) => Err(e),
                other => Err(format!("unexpected response {other:?}")),
            })
            .collect()
    } else {
        fan_out_sample(&client(&a.engine)?, &seeds, &params)?
    };

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut failed = 0;
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(samples) => {
                for s in samples {
                    for e in s.entries {
                        writeln!(out, "{seed}\t{}\t{}\t{}", e.node, e.score, e.hop)?;
                    }
                }
            }
            Err(e) => {
                warn!("seed {seed}: {e}");
                failed += 1;
            }
        }
    }
    out.flush()?;
    if failed > 0 {
        bail!("{failed} of {} seeds failed", seeds.len());
    }
    Ok(())
}

fn model_config(m: &ModelArgs, feature_dims: BTreeMap<u16, usize>, node_counts: BTreeMap<u16, usize>) -> ModelConfig {
    let hidden = if m.temporal { m.heads * m.token_dim } else { m.hidden };
    let mut c = ModelConfig::new(feature_dims, hidden, m.layers);
    c.node_counts = node_counts;
    c.encoder = match m.encoder {
        EncoderArg::Single => EncoderMode::Single,
        EncoderArg::Dual => EncoderMode::Dual,
    };
    c.aggregator = match m.aggregator {
        AggregatorArg::Mean => Aggregator::Mean,
        AggregatorArg::Attention => Aggregator::Attention,
        AggregatorArg::SelfAttention => Aggregator::SelfAttention,
    };
    c.decoder = match m.decoder {
        DecoderArg::Cosine => DecoderKind::Cosine,
        DecoderArg::Mlp => DecoderKind::Mlp { hidden: m.mlp_hidden.clone() },
        DecoderArg::Inbatch => DecoderKind::InBatch,
    };
    c.temperature = m.temperature;
    c.id_embeddings = m.id_embeddings;
    c.id_dim = m.id_dim;
    if m.temporal {
        let mut t = TemporalConfig::new(m.heads, m.token_dim, m.seq_len, m.future_len);
        t.mask = match m.mask {
            MaskArg::Regular => MaskMode::RegularCausal,
            MaskArg::Prefix => MaskMode::PrefixCausal,
        };
        t.positions = match m.pos {
            PosArg::None => PositionMode::None,
            PosArg::Sin => PositionMode::Sinusoidal,
            PosArg::Ts => PositionMode::Timestamp,
        };
        t.long_term_weight = m.long_term_weight;
        t.activity_edge_type = m.activity_edge_type;
        c.temporal = Some(t);
    }
    c
}

fn trainer_config(a: &TrainArgs) -> TrainerConfig {
    TrainerConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        grouping: !a.no_grouping,
        group_size: a.group_size,
        gradient_step: a.gradient_step,
        strategy: match a.sampler {
            SamplerArg::Random => NeighborStrategy::Random,
            SamplerArg::PprPush => NeighborStrategy::PprPush(PprConfig::default()),
            SamplerArg::PprTwoHop => NeighborStrategy::PprTwoHop(WalkConfig::default()),
        },
        neighbors: a.neighbors,
        inner_fanouts: a.inner_fanouts.clone(),
        adaptive: a.adaptive.then(AdaptiveConfig::default),
        local_aggregation: a.local_aggregation,
        lr_scaling: a.lr_scaling,
        prefetch: PrefetchConfig { capacity: a.queue_capacity, producers: a.producers },
        mlp_init: (a.mlp_init_epochs > 0).then(|| MlpInitConfig { epochs: a.mlp_init_epochs, ..MlpInitConfig::default() }),
        seed: a.seed,
    }
}

fn fit<Q: GraphQuery + 'static>(a: &TrainArgs, query: Arc<Q>, config: ModelConfig) -> Result<()> {
    let train = read_records(open(&a.train)?)?;
    let validation: Vec<TrainingRecord> = match &a.validation {
        Some(p) => read_records(open(p)?)?,
        None => Vec::new(),
    };
    info!("{} training and {} validation records", train.len(), validation.len());
    let model = Model::new(config, a.seed)?;
    let mut trainer = Trainer::new(model, query, trainer_config(a))?;
    let mut log: Option<BufWriter<File>> = a.metrics.as_deref().map(create).transpose()?;
    let start = Instant::now();
    let metrics = trainer.fit(&train, &validation, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    if let Some(path) = &a.checkpoint {
        save_checkpoint(&trainer.model, path)?;
        info!("checkpoint written to {}", path.display());
    }
    let last = metrics.last();
    print_json(&json!({
        "epochs": metrics.len(),
        "final_auc": last.and_then(|m| m.auc),
        "final_loss": last.map(|m| m.mean_loss),
        "seconds": start.elapsed().as_secs_f64(),
        "counters": trainer.counters,
    }))
}

pub fn train(a: TrainArgs) -> Result<()> {
    if a.engine.is_empty() {
        let graph = load_graph(&a.graph)?;
        let dims = graph.node_types().map(|t| (t, graph.feature_dim(t))).collect();
        let config = model_config(&a.model, dims, graph.node_counts());
        fit(&a, Arc::new(graph), config)
    } else {
        let schema = read_schema(&a.graph)?;
        let client = client(&a.engine)?;
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        // every shard keeps the full node tables
        let health = client.health(0)?;
        for (t, n) in health.node_counts {
            counts.insert(t, n as usize);
        }
        let config = model_config(&a.model, schema.feature_dims().collect(), counts);
        fit(&a, Arc::new(client), config)
    }
}

pub fn serve(a: ServeArgs) -> Result<()> {
    if a.partition >= a.partitions {
        bail!("partition {} out of range for {} partitions", a.partition, a.partitions);
    }
    let graph = load_graph(&a.graph)?;
    let shard = if a.partitions == 1 { graph } else { graph.shard(|n| partition_of(n, a.partitions) == a.partition) };
    let state = ShardState::new(Arc::new(EpochGraph::new(shard)), a.partition, a.partitions)?;
    let handle = serve_shard(state, &a.bind)?;
    println!("{}", handle.addr());
    loop {
        std::thread::park();
    }
}

pub fn refresh(a: RefreshArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let store = Arc::new(match &a.store_in {
        Some(p) => EmbeddingStore::load(open(p)?)?,
        None => EmbeddingStore::new(),
    });
    let mut cfg = NearlineConfig::ppr(model.config.layers, a.fanout);
    cfg.edge_types = EventKind::ALL.into_iter().map(|k| (k, a.edge_type)).collect();
    cfg.settle = !a.no_settle;
    let mut refresher = NearlineRefresher::new(model, Arc::new(EpochGraph::new(graph)), Arc::clone(&store), cfg)?;
    let report = refresher.run(open(&a.events)?)?;
    let mut w = create(&a.store_out)?;
    store.dump(&mut w)?;
    w.flush()?;
    print_json(&serde_json::to_value(&report)?)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let data = planted_bipartite(&BipartiteConfig { members: a.members, items: a.items, seed: a.seed, ..BipartiteConfig::default() });
    let graph = Arc::new(data.graph);
    let records = power_law_records(a.records, a.members, a.items, 1.1, a.seed);
    let (before, after) = engine_query_count(&records, a.group_size)?;
    print_json(&json!({
        "bench": "query_count",
        "records": records.len(),
        "ungrouped": before,
        "grouped": after,
        "member_reduction": before.member_queries as f64 / after.member_queries.max(1) as f64,
        "total_reduction": before.total() as f64 / after.total().max(1) as f64,
    }))?;

    let feature_dims: BTreeMap<u16, usize> = graph.node_types().map(|t| (t, graph.feature_dim(t))).collect();
    for (grouping, producers) in [(false, 1), (true, 1), (true, a.producers)] {
        let model = Model::new(ModelConfig::new(feature_dims.clone(), 16, 1), a.seed)?;
        let cfg = TrainerConfig {
            epochs: 1,
            grouping,
            group_size: a.group_size,
            neighbors: a.neighbors,
            prefetch: PrefetchConfig { capacity: 10, producers },
            seed: a.seed,
            ..TrainerConfig::default()
        };
        let mut t = Trainer::new(model, Arc::clone(&graph), cfg)?;
        let start = Instant::now();
        let (loss, updates, depth) = t.train_epoch(&records)?;
        print_json(&json!({
            "bench": "train_epoch",
            "grouping": grouping,
            "producers": producers,
            "seconds": start.elapsed().as_secs_f64(),
            "loss": loss,
            "updates": updates,
            "queue_depth_max": depth,
            "member_queries": t.counters.member_queries,
            "item_queries": t.counters.item_queries,
        }))?;
    }

    let seeds: Vec<NodeRef> = graph.nodes_of(0).take(200).collect();
    let cfg = PprConfig::default();
    let start = Instant::now();
    for s in &seeds {
        ppr_forward_push(&*graph, *s, &cfg)?;
    }
    let sequential = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let batch = ppr_forward_push_batch(&*graph, &seeds, &cfg);
    let batched = start.elapsed().as_secs_f64();
    if let Some(e) = batch.into_iter().find_map(Result::err) {
        return Err(e.into());
    }
    print_json(&json!({ "bench": "ppr_push", "seeds": seeds.len(), "sequential_seconds": sequential, "batch_seconds": batched }))?;
    Ok(())
}
