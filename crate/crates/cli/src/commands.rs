use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fedgnn_core::embed::{EmbeddingClient, EmbeddingServer, TcpServerHandle, TcpTransport};
use fedgnn_core::graph::{build_subgraphs, load_graph, read_assignment, write_assignment, write_graph, GraphPaths};
use fedgnn_core::metrics::{compare_strategies, format_table, TargetRule};
use fedgnn_core::orchestrator::{partition_for, plan_clients, NoObserver};
use fedgnn_core::partition::{edge_cut, partition_bfs_grow};
use fedgnn_core::report::{read_rounds_file, round_rows, series_from_rows, write_rounds_file, write_summary};
use fedgnn_core::scoring::{degree_scores, frequency_scores};
use fedgnn_core::synth::{generate_sbm, SbmParams};
use fedgnn_core::{run_session, Graph, PartitionAssignment, TrainConfig};
use thiserror::Error;

use crate::args::{CompareArgs, GenerateArgs, PartitionArgs, RunArgs, ScoreArg, ScoreArgs, ServeArgs, StatsArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fedgnn_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 for configuration and usage problems, 2 for everything that failed while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(fedgnn_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// `println!` that stays quiet when stdout is closed early (`| head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn io_at<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load(data: &Path) -> Result<Graph> {
    io_at(data, fs::metadata(data))?;
    Ok(load_graph(&GraphPaths::in_dir(data))?)
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let params = SbmParams {
        n: a.n,
        blocks: a.blocks,
        p_in: a.p_in,
        p_out: a.p_out,
        feat_dim: a.feat_dim,
        noise: a.noise,
        seed: a.seed,
    };
    let g = generate_sbm(&params)?;
    io_at(&a.out, fs::create_dir_all(&a.out))?;
    write_graph(&g, &GraphPaths::in_dir(&a.out))?;
    say!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_edges(), a.out.display());
    Ok(())
}

/// Where `run` caches the partition for a given client count, seed and slack.
fn partition_cache(data: &Path, clients: usize, seed: u64, slack: f64) -> PathBuf {
    data.join(format!("partition-k{clients}-s{seed}-slack{slack}.txt"))
}

pub fn partition(a: &PartitionArgs) -> Result<()> {
    let g = load(&a.data)?;
    let p = partition_bfs_grow(&g, a.clients, a.slack, a.seed)?;
    let out = a.out.clone().unwrap_or_else(|| partition_cache(&a.data, a.clients, a.seed, a.slack));
    write_assignment(&out, &p)?;
    say!("sizes={:?} edge_cut={} file={}", p.part_sizes(), edge_cut(&g, &p), out.display());
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let g = load(&a.data)?;
    let p = read_assignment(&a.partition)?;
    if p.num_nodes() != g.num_nodes() {
        return Err(CliError::Usage(format!(
            "partition covers {} nodes, dataset has {}",
            p.num_nodes(),
            g.num_nodes()
        )));
    }
    io_at(&a.out, fs::create_dir_all(&a.out))?;
    for (k, sg) in build_subgraphs(&g, &p)?.iter().enumerate() {
        let table = match a.kind {
            ScoreArg::Frequency => frequency_scores(&sg.expand(sg.pull_candidates())?, a.layers),
            ScoreArg::Degree => degree_scores(sg),
        };
        table.write(&a.out.join(format!("scores-client{k}.txt")))?;
        say!("client={k} candidates={}", table.len());
    }
    Ok(())
}

fn effective_config(a: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_json_file(p).map_err(|e| match e {
            fedgnn_core::Error::Io(source) => CliError::Io { path: p.clone(), source },
            other => other.into(),
        })?,
        None => TrainConfig::default(),
    };
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run_partition(a: &RunArgs, g: &Graph, cfg: &TrainConfig) -> Result<PartitionAssignment> {
    if let Some(p) = &a.partition {
        return Ok(read_assignment(p)?);
    }
    let cache = partition_cache(&a.data, cfg.clients, cfg.seed, cfg.partition_slack);
    if cache.exists() {
        let p = read_assignment(&cache)?;
        if p.num_nodes() == g.num_nodes() && p.num_parts() == cfg.clients {
            log::info!("using cached partition {}", cache.display());
            return Ok(p);
        }
    }
    let p = partition_for(g, cfg)?;
    // a read-only dataset directory only costs the cache
    if let Err(e) = write_assignment(&cache, &p) {
        log::warn!("could not cache partition at {}: {e}", cache.display());
    }
    Ok(p)
}

pub fn run(a: &RunArgs) -> Result<()> {
    let cfg = effective_config(a)?;
    let g = load(&a.data)?;
    let p = run_partition(a, &g, &cfg)?;
    if p.num_nodes() != g.num_nodes() {
        return Err(CliError::Usage(format!("partition covers {} nodes, dataset has {}", p.num_nodes(), g.num_nodes())));
    }

    io_at(&a.out, fs::create_dir_all(&a.out))?;
    io_at(&a.out, fs::write(a.out.join("config.json"), cfg.to_json()))?;
    write_assignment(&a.out.join("partition.txt"), &p)?;
    let scores = a.out.join("scores");
    io_at(&scores, fs::create_dir_all(&scores))?;
    for (k, plan) in plan_clients(&g, &p, &cfg)?.iter().enumerate() {
        plan.scores.write(&scores.join(format!("client{k}.txt")))?;
    }

    let out = run_session(&g, &p, &cfg, &NoObserver)?;
    let rows = round_rows(&out.records, out.clock);
    write_rounds_file(&a.out.join("rounds.csv"), &rows)?;
    let series = series_from_rows(cfg.strategy.name(), &rows);
    let table = compare_strategies(std::slice::from_ref(&series), TargetRule::default());
    let path = a.out.join("summary.csv");
    write_summary(io_at(&path, fs::File::create(&path))?, &table)?;

    let last = out.records.last();
    say!(
        "strategy={} rounds={} acc={:.4} peak_ma5={:.4} time_s={:.3} clock={:?} out={}",
        cfg.strategy,
        cfg.rounds,
        last.map_or(f64::NAN, |r| r.acc),
        series.peak_smoothed(),
        last.map_or(0.0, |r| r.cum_s(out.clock)),
        out.clock,
        a.out.display()
    );
    Ok(())
}

/// Display name of a run: its strategy, or the directory name when that is
/// missing or already taken.
fn run_name(dir: &Path, taken: &HashSet<String>) -> String {
    let from_config = fs::read_to_string(dir.join("config.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<TrainConfig>(&t).ok())
        .map(|c| c.strategy.name().to_string());
    let dir_name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    match from_config {
        Some(n) if !taken.contains(&n) => n,
        _ => dir_name,
    }
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let mut runs = Vec::new();
    let mut taken = HashSet::new();
    for dir in &a.runs {
        let rows = read_rounds_file(&dir.join("rounds.csv"))?;
        if rows.is_empty() {
            return Err(CliError::Usage(format!("{} has no rounds", dir.display())));
        }
        let name = run_name(dir, &taken);
        taken.insert(name.clone());
        runs.push(series_from_rows(&name, &rows));
    }
    let rule = a.absolute.map_or(TargetRule::default(), TargetRule::Absolute);
    let table = compare_strategies(&runs, rule);
    let _ = write!(std::io::stdout(), "{}", format_table(&table));
    if let Some(out) = &a.out {
        write_summary(io_at(out, fs::File::create(out))?, &table)?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    if a.layers < 2 || a.hidden == 0 {
        return Err(CliError::Usage("the server needs layers >= 2 and hidden >= 1".into()));
    }
    let server = Arc::new(EmbeddingServer::new(a.layers, a.hidden));
    let handle = TcpServerHandle::bind(server, a.bind.as_str())?;
    say!("listening on {}", handle.local_addr());
    let _ = std::io::stdout().flush();
    handle.join();
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let mut conn = EmbeddingClient::new(Box::new(TcpTransport::connect(a.server.as_str())?));
    let _ = write!(std::io::stdout(), "{}", conn.stats()?.to_text());
    Ok(())
}

