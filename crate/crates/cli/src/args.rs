use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedgnn_core::config::TransportKind;
use fedgnn_core::{ClockKind, LayerKind, Strategy, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "fedgnn", version, about = "Federated subgraph GNN training with an embedding server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a stochastic block model dataset.
    Generate(GenerateArgs),
    /// Split a dataset into client partitions.
    Partition(PartitionArgs),
    /// Dump pull-node scores for every client.
    Score(ScoreArgs),
    /// Run one training session.
    Run(Box<RunArgs>),
    /// Compare finished runs.
    Compare(CompareArgs),
    /// Serve embeddings over TCP until killed.
    Serve(ServeArgs),
    /// Print the counters of a running embedding server.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1200)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.05)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    pub p_out: f64,
    #[arg(long, default_value_t = 16)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub clients: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allowed part size above the mean, as a fraction.
    #[arg(long, default_value_t = 0.1)]
    pub slack: f64,
    /// Defaults to the cache file inside the dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Frequency,
    Degree,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Partition file written by `partition`.
    #[arg(long)]
    pub partition: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, value_enum, default_value_t = ScoreArg::Frequency)]
    pub kind: ScoreArg,
    /// Directory for `scores-client<k>.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Graphconv,
    Sage,
}

/// Flags that override the config file. Unset flags leave it alone.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    /// Remote neighbours kept per boundary vertex, or `all`.
    #[arg(long, value_parser = parse_retention)]
    pub retention: Option<Option<usize>>,
    #[arg(long)]
    pub score_frac: Option<f64>,
    #[arg(long)]
    pub prefetch_frac: Option<f64>,
    #[arg(long)]
    pub fanout: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_transport)]
    pub transport: Option<TransportKind>,
    /// Listen address for the embedding server of a tcp run.
    #[arg(long)]
    pub bind: Option<String>,
    /// Attach to an already running embedding server (implies tcp).
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, value_parser = parse_clock)]
    pub clock: Option<ClockKind>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: fedgnn_core::Error| e.to_string())
}

fn parse_transport(s: &str) -> Result<TransportKind, String> {
    s.parse().map_err(|e: fedgnn_core::Error| e.to_string())
}

fn parse_clock(s: &str) -> Result<ClockKind, String> {
    s.parse().map_err(|e: fedgnn_core::Error| e.to_string())
}

fn parse_retention(s: &str) -> Result<Option<usize>, String> {
    match s.to_ascii_lowercase().as_str() {
        "all" | "none" | "inf" => Ok(None),
        n => n.parse().map(Some).map_err(|_| format!("expected a count or `all`, got {s:?}")),
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { cfg.$f = v; })* };
        }
        set!(strategy, rounds, clients, retention, score_frac, prefetch_frac, fanout, batch_size, epochs, layers, hidden, lr, seed, transport, bind);
        if let Some(s) = &self.server {
            cfg.server = Some(s.clone());
            cfg.transport = TransportKind::Tcp;
        }
        if self.clock.is_some() {
            cfg.clock = self.clock;
        }
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Graphconv => LayerKind::GraphConv,
                ModelArg::Sage => LayerKind::SageConv,
            };
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the run's artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use this partition instead of the cached or computed one.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories containing rounds.csv.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Target = min peak minus this many accuracy points, instead of 99% of it.
    #[arg(long)]
    pub absolute: Option<f64>,
    /// Where to write the comparison CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub bind: String,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub server: String,
}
