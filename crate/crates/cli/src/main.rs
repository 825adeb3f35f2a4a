mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Desk-scale graph engine, samplers and GNN trainer.
#[derive(Parser, Debug)]
#[command(name = "lignn", version)]
struct Cli {
    /// TOML file whose values override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate TSV inputs and report counts, or write a synthetic dataset.
    Build(BuildArgs),
    /// Add artificial edges from cold-start nodes to similar active nodes.
    Densify(DensifyArgs),
    /// Sample neighbors for a list of seeds.
    Sample(SampleArgs),
    /// Train a link-prediction model.
    Train(TrainArgs),
    /// Serve one partition of a graph over TCP.
    Serve(ServeArgs),
    /// Replay interaction events and refresh node embeddings.
    Refresh(RefreshArgs),
    /// Measure query counts and epoch times on synthetic data.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GraphArgs {
    /// `edge_type.<id> = kind` / `feature_dim.<type> = D` file.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Bipartite,
    Temporal,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BuildArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// Generate a dataset instead of reading one.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long, default_value_t = 2000)]
    pub members: usize,
    #[arg(long, default_value_t = 2000)]
    pub items: usize,
    #[arg(long, default_value_t = 10)]
    pub communities: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for normalized (or generated) schema, edges and nodes.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DensifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// `node_type<TAB>node_id<TAB>e1,e2,...`
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long = "lower-q", default_value_t = 0.30)]
    pub lower_q: f64,
    #[arg(long = "upper-q", default_value_t = 0.90)]
    pub upper_q: f64,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long = "edge-type", default_value_t = 100)]
    pub edge_type: u16,
    /// Edge types counted for out-degree (all when omitted).
    #[arg(long = "degree-edge-types", value_delimiter = ',')]
    pub degree_edge_types: Vec<u16>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Random,
    Weighted,
    PprPush,
    #[value(name = "ppr-2hop")]
    #[serde(rename = "ppr-2hop")]
    PprTwoHop,
    Temporal,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// Query running servers (`host:port`, one per partition) instead of
    /// loading the graph.
    #[arg(long, value_delimiter = ',')]
    pub engine: Vec<String>,
    #[arg(long, value_enum, default_value = "random")]
    pub strategy: StrategyArg,
    /// One seed per line: `node_type<TAB>node_id` or `type:id`.
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,10")]
    pub fanout: Vec<u32>,
    /// Per-edge-type weight multipliers, `type=factor`.
    #[arg(long = "multiplier", value_delimiter = ',')]
    pub multipliers: Vec<String>,
    #[arg(long, default_value_t = 0.15)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub rmax: f64,
    /// Neighbors kept by PPR strategies; events kept by `temporal`.
    #[arg(long, default_value_t = 200)]
    pub topk: u32,
    #[arg(long, default_value_t = 10_000)]
    pub walks: u32,
    #[arg(long = "before-ts", default_value_t = i64::MAX)]
    pub before_ts: i64,
    #[arg(long = "edge-type", default_value_t = 1)]
    pub edge_type: u16,
    #[arg(long = "rng-seed", default_value_t = 0)]
    pub rng_seed: u64,
    /// Output TSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderArg {
    Single,
    Dual,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorArg {
    Mean,
    Attention,
    SelfAttention,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderArg {
    Cosine,
    Mlp,
    Inbatch,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskArg {
    Regular,
    Prefix,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosArg {
    None,
    Sin,
    Ts,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    Random,
    PprPush,
    #[value(name = "ppr-2hop")]
    #[serde(rename = "ppr-2hop")]
    PprTwoHop,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "single")]
    pub encoder: EncoderArg,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregator: AggregatorArg,
    #[arg(long, value_enum, default_value = "cosine")]
    pub decoder: DecoderArg,
    /// Hidden widths of the MLP decoder.
    #[arg(long = "mlp-hidden", value_delimiter = ',', default_value = "16")]
    pub mlp_hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long = "id-embeddings")]
    pub id_embeddings: bool,
    #[arg(long = "id-dim", default_value_t = 8)]
    pub id_dim: usize,
    #[arg(long)]
    pub temporal: bool,
    /// Tokens per encoder output.
    #[arg(long = "H", default_value_t = 4)]
    pub heads: usize,
    /// Token width; `--hidden` is replaced by `H·d` for temporal models.
    #[arg(long = "d", default_value_t = 64)]
    pub token_dim: usize,
    /// Activity sequence length.
    #[arg(long = "N", default_value_t = 100)]
    pub seq_len: usize,
    #[arg(long = "future-len", default_value_t = 10)]
    pub future_len: usize,
    #[arg(long, value_enum, default_value = "prefix")]
    pub mask: MaskArg,
    #[arg(long, value_enum, default_value = "sin")]
    pub pos: PosArg,
    #[arg(long = "long-term-weight", default_value_t = 1.0)]
    pub long_term_weight: f64,
    #[arg(long = "activity-edge-type", default_value_t = 1)]
    pub activity_edge_type: u16,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// Train against running servers; `--schema` still supplies feature dims.
    #[arg(long, value_delimiter = ',')]
    pub engine: Vec<String>,
    /// `records.tsv` with training pairs.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long = "no-grouping")]
    pub no_grouping: bool,
    #[arg(long = "group-size", default_value_t = 4)]
    pub group_size: usize,
    #[arg(long = "gradient-step", default_value_t = 1)]
    pub gradient_step: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
    /// Fanouts of hops after the first.
    #[arg(long = "inner-fanouts", value_delimiter = ',')]
    pub inner_fanouts: Vec<usize>,
    /// Grow the first-hop neighbor count when validation AUC stalls.
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long = "local-aggregation", default_value_t = 1)]
    pub local_aggregation: usize,
    #[arg(long = "lr-scaling")]
    pub lr_scaling: bool,
    #[arg(long, default_value_t = 1)]
    pub producers: usize,
    #[arg(long = "queue-capacity", default_value_t = 10)]
    pub queue_capacity: usize,
    /// Epochs of MLP-init before graph training (0 = off).
    #[arg(long = "mlp-init-epochs", default_value_t = 0)]
    pub mlp_init_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model checkpoint to write (its config goes next to it).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines metrics log, one line per epoch.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ServeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    #[arg(long, default_value = "127.0.0.1:7700")]
    pub bind: String,
    #[arg(long, default_value_t = 0)]
    pub partition: usize,
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RefreshArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `ts_ms<TAB>kind<TAB>member_type<TAB>member_id<TAB>item_type<TAB>item_id`
    #[arg(long)]
    pub events: PathBuf,
    /// Existing embedding dump to start from.
    #[arg(long = "store-in")]
    pub store_in: Option<PathBuf>,
    #[arg(long = "store-out")]
    pub store_out: PathBuf,
    /// Children per level of the re-inference trees.
    #[arg(long, default_value_t = 10)]
    pub fanout: usize,
    /// Edge type inserted for every event.
    #[arg(long = "edge-type", default_value_t = 1)]
    pub edge_type: u16,
    /// Skip the final pass that re-infers every touched node.
    #[arg(long = "no-settle")]
    pub no_settle: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub members: usize,
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
    #[arg(long, default_value_t = 10_000)]
    pub records: usize,
    #[arg(long = "group-size", default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 10)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 4)]
    pub producers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn with_config<T: Serialize + serde::de::DeserializeOwned>(args: T, cli_config: &Option<PathBuf>, name: &str) -> Result<T> {
    match cli_config {
        Some(path) => config::apply(args, path, name),
        None => Ok(args),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIGNN_LOG", "info")).init();
    let cli = Cli::parse();
    let c = &cli.config;
    match cli.command {
        Command::Build(a) => commands::build(with_config(a, c, "build")?),
        Command::Densify(a) => commands::densify(with_config(a, c, "densify")?),
        Command::Sample(a) => commands::sample(with_config(a, c, "sample")?),
        Command::Train(a) => commands::train(with_config(a, c, "train")?),
        Command::Serve(a) => commands::serve(with_config(a, c, "serve")?),
        Command::Refresh(a) => commands::refresh(with_config(a, c, "refresh")?),
        Command::Bench(a) => commands::bench(with_config(a, c, "bench")?),
    }
}
