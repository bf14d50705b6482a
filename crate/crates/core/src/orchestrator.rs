//! Session setup and the round loop: broadcast, client rounds, FedAvg,
//! evaluation.

use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};
use std::time::Instant;

use crate::client::{Client, ClientRound};
use crate::config::{FedAvgWeighting, Pruning, ScoreKind, TrainConfig, TransportKind};
use crate::embed::{EmbeddingClient, EmbeddingServer, InProcTransport, ServerStats, TcpServerHandle, TcpTransport};
use crate::error::{Error, Result};
use crate::gnn::{model_forward, GnnModel, Injections};
use crate::graph::{build_subgraphs, Graph, PartitionAssignment, Subgraph};
use crate::linalg::Matrix;
use crate::metrics::moving_average;
use crate::partition::partition_bfs_grow;
use crate::rng::{init_rng, prune_rng};
use crate::sampler::{full_computation_graph, ComputationGraph, RemotePolicy};
use crate::scoring::{degree_scores, frequency_scores, prune_retention, prune_top_f, select_prefetch, ScoreTable};
use crate::timing::{ClockKind, Traffic};

/// A client's pruned subgraph, its pull-node scores and what it prefetches.
#[derive(Debug, Clone)]
pub struct ClientPlan {
    pub subgraph: Subgraph,
    /// Scores of every pull candidate, computed on the full expansion.
    pub scores: ScoreTable,
    /// Global IDs pulled at round start.
    pub prefetch: Vec<usize>,
}

pub fn partition_for(graph: &Graph, cfg: &TrainConfig) -> Result<PartitionAssignment> {
    partition_bfs_grow(graph, cfg.clients, cfg.partition_slack, cfg.seed)
}

/// Builds, scores and prunes every client's subgraph, then narrows each push
/// set to nodes some other client actually kept.
pub fn plan_clients(graph: &Graph, assignment: &PartitionAssignment, cfg: &TrainConfig) -> Result<Vec<ClientPlan>> {
    let base = build_subgraphs(graph, assignment)?;
    let mut plans = Vec::with_capacity(base.len());
    for (c, sg) in base.iter().enumerate() {
        let full = sg.expand(sg.pull_candidates())?;
        let scores = match cfg.score_kind {
            ScoreKind::Frequency => frequency_scores(&full, cfg.layers),
            ScoreKind::Degree => degree_scores(sg),
        };
        let subgraph = match cfg.strategy.pruning() {
            Pruning::Drop => sg.unexpanded(),
            Pruning::Full => full,
            Pruning::Retention => prune_retention(sg, cfg.retention, &mut prune_rng(cfg.seed, c))?,
            Pruning::TopScored => prune_top_f(sg, &scores, cfg.score_frac)?,
        };
        plans.push(ClientPlan { subgraph, scores, prefetch: Vec::new() });
    }

    let mut wanted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); plans.len()];
    for p in &plans {
        for &r in p.subgraph.remote_nodes() {
            wanted[assignment.part_of(r)].insert(r);
        }
    }
    for (p, w) in plans.iter_mut().zip(wanted) {
        p.subgraph.set_push_nodes(w.into_iter().collect())?;
        p.prefetch = if cfg.strategy.prefetches() {
            let mut ids = select_prefetch(&p.scores.restricted_to(p.subgraph.remote_nodes()), cfg.prefetch_frac);
            ids.sort_unstable();
            ids
        } else {
            p.subgraph.remote_nodes().to_vec()
        };
    }
    Ok(plans)
}

/// Elementwise weighted mean of every parameter. Zero-weight models are
/// skipped. Each element sums its terms in sorted order, so the result does
/// not depend on the order of the clients.
pub fn fedavg(models: &[GnnModel], weights: &[f64]) -> Result<GnnModel> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::Validation(format!("{} models with {} weights", models.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Validation(format!("weight {w} is not a finite non-negative number")));
    }
    let total: f64 = {
        let mut ws = weights.to_vec();
        ws.sort_by(f64::total_cmp);
        ws.iter().sum()
    };
    if total <= 0.0 {
        return Err(Error::Validation("all aggregation weights are zero".into()));
    }
    if let Some(i) = models.iter().position(|m| !m.same_shape(&models[0])) {
        return Err(Error::Shape(format!("model {i} differs in architecture from model 0")));
    }
    let live: Vec<(&GnnModel, f64)> = models.iter().zip(weights.iter().copied()).filter(|(_, w)| *w > 0.0).collect();
    let mut out = models[0].clone();
    let mut terms = Vec::with_capacity(live.len());
    for (pi, acc) in out.params_mut().into_iter().enumerate() {
        let sources: Vec<(&Matrix, f64)> = live.iter().map(|(m, w)| (m.params()[pi], *w)).collect();
        for (e, x) in acc.data_mut().iter_mut().enumerate() {
            terms.clear();
            terms.extend(sources.iter().map(|(p, w)| w * p.data()[e]));
            terms.sort_by(f64::total_cmp);
            *x = terms.iter().sum::<f64>() / total;
        }
    }
    Ok(out)
}

/// Full-neighbourhood inference on the whole graph.
pub struct Evaluator {
    cg: ComputationGraph,
    inputs: Matrix,
    test: Vec<usize>,
    labels: Vec<u32>,
}

impl Evaluator {
    pub fn new(graph: &Graph, layers: usize) -> Result<Self> {
        let n = graph.num_nodes();
        let whole = PartitionAssignment::new(vec![0; n], 1)?;
        let sg = build_subgraphs(graph, &whole)?.remove(0);
        // every node is a seed, so each block sees the true in-degrees
        let seeds: Vec<usize> = (0..n).collect();
        let cg = full_computation_graph(&sg, &seeds, layers, RemotePolicy::LocalOnly)?;
        Ok(Evaluator {
            inputs: sg.features().gather_rows(&cg.blocks[0].input_nodes),
            cg,
            test: graph.test_mask().to_vec(),
            labels: graph.labels().to_vec(),
        })
    }

    /// Logits of every node, by global ID.
    pub fn logits(&self, model: &GnnModel) -> Result<Matrix> {
        model_forward(model, &self.cg, &self.inputs, &Injections::new())
    }

    pub fn accuracy(&self, model: &GnnModel) -> Result<f64> {
        if self.test.is_empty() {
            return Err(Error::Validation("empty test mask".into()));
        }
        let logits = self.logits(model)?;
        let correct = self.test.iter().filter(|&&v| argmax(logits.row(v)) == self.labels[v] as usize).count();
        Ok(correct as f64 / self.test.len() as f64)
    }
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Hooks into a running session, mostly for tests.
pub trait SessionObserver: Sync {
    fn after_pretrain(&self, _global: &GnnModel) {}
    fn epoch_end(&self, _client: usize, _round: usize, _epoch: usize, _model: &GnnModel) {}
    /// After aggregation and evaluation; every push of the round has landed.
    fn round_end(&self, _record: &RoundRecord, _global: &GnnModel) {}
}

pub struct NoObserver;

impl SessionObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRound>,
    pub agg_wall_ms: f64,
    pub agg_modeled_ms: f64,
    /// Pull through aggregation, evaluation excluded.
    pub round_wall_ms: f64,
    pub round_modeled_ms: f64,
    pub acc: f64,
    pub acc_ma5: f64,
    pub cum_wall_s: f64,
    pub cum_modeled_s: f64,
}

impl RoundRecord {
    pub fn agg_ms(&self, clock: ClockKind) -> f64 {
        match clock {
            ClockKind::Modeled => self.agg_modeled_ms,
            ClockKind::Wall => self.agg_wall_ms,
        }
    }

    pub fn cum_s(&self, clock: ClockKind) -> f64 {
        match clock {
            ClockKind::Modeled => self.cum_modeled_s,
            ClockKind::Wall => self.cum_wall_s,
        }
    }

    pub fn emb_pulled(&self) -> usize {
        self.clients.iter().map(|c| c.emb_pulled).sum()
    }

    pub fn emb_pushed(&self) -> usize {
        self.clients.iter().map(|c| c.emb_pushed).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub records: Vec<RoundRecord>,
    pub model: GnnModel,
    pub clock: ClockKind,
    /// Server counters right after pre-training.
    pub pretrain_stats: ServerStats,
    pub final_stats: ServerStats,
    /// Per client: retained remote nodes, push nodes, prefetched nodes.
    pub client_sets: Vec<(usize, usize, usize)>,
}

pub fn run_session(
    graph: &Graph,
    assignment: &PartitionAssignment,
    cfg: &TrainConfig,
    observer: &dyn SessionObserver,
) -> Result<SessionOutput> {
    run_session_with(graph, assignment, cfg, None, observer)
}

/// Like [`run_session`], optionally with a caller-owned server (inproc, or
/// served over TCP when no external address is configured).
pub fn run_session_with(
    graph: &Graph,
    assignment: &PartitionAssignment,
    cfg: &TrainConfig,
    server: Option<Arc<EmbeddingServer>>,
    observer: &dyn SessionObserver,
) -> Result<SessionOutput> {
    cfg.validate()?;
    if assignment.num_parts() != cfg.clients {
        return Err(Error::Config(format!(
            "partition has {} parts but {} clients are configured",
            assignment.num_parts(),
            cfg.clients
        )));
    }
    let plans = plan_clients(graph, assignment, cfg)?;
    let client_sets =
        plans.iter().map(|p| (p.subgraph.remote_nodes().len(), p.subgraph.push_nodes().len(), p.prefetch.len())).collect();
    let evaluator = Evaluator::new(graph, cfg.layers)?;
    let mut global =
        GnnModel::new(cfg.model, cfg.layers, graph.feature_dim(), cfg.hidden, graph.num_classes(), &mut init_rng(cfg.seed))?;

    let local_server = match (cfg.transport, &cfg.server) {
        (TransportKind::Tcp, Some(_)) => None,
        _ => Some(server.unwrap_or_else(|| Arc::new(EmbeddingServer::new(cfg.layers, cfg.hidden)))),
    };
    let mut _tcp: Option<TcpServerHandle> = None;
    let connect: Box<dyn Fn() -> Result<EmbeddingClient>> = match cfg.transport {
        TransportKind::Inproc => {
            let s = local_server.clone().expect("inproc has a local server");
            Box::new(move || Ok(EmbeddingClient::new(Box::new(InProcTransport::new(s.clone())))))
        }
        TransportKind::Tcp => {
            let addr = match &cfg.server {
                Some(a) => a.clone(),
                None => {
                    let h = TcpServerHandle::bind(local_server.clone().expect("local server"), cfg.bind.as_str())?;
                    let a = h.local_addr().to_string();
                    _tcp = Some(h);
                    a
                }
            };
            Box::new(move || Ok(EmbeddingClient::new(Box::new(TcpTransport::connect(addr.as_str())?))))
        }
    };

    let mut clients = Vec::with_capacity(plans.len());
    for (c, plan) in plans.into_iter().enumerate() {
        let mut cl = Client::new(c, plan, cfg, connect()?)?;
        cl.register()?;
        clients.push(cl);
    }
    let weights: Vec<f64> = clients
        .iter()
        .map(|c| {
            let n = c.subgraph().num_train();
            match (cfg.fedavg, n) {
                (_, 0) => 0.0,
                (FedAvgWeighting::Samples, n) => n as f64,
                (FedAvgWeighting::Uniform, _) => 1.0,
            }
        })
        .collect();

    for cl in &mut clients {
        cl.pretrain(&global)?;
    }
    let mut admin = connect()?;
    let pretrain_stats = admin.stats()?;
    observer.after_pretrain(&global);

    let cost = cfg.cost_model();
    let n_params: usize = global.params().iter().map(|p| p.data().len()).sum();
    let participating = weights.iter().filter(|&&w| w > 0.0).count();
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut accs = Vec::with_capacity(cfg.rounds);
    let (mut cum_wall, mut cum_modeled) = (0.0, 0.0);

    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let barrier = Barrier::new(clients.len());
        let results: Vec<Result<(GnnModel, ClientRound)>> = std::thread::scope(|s| {
            let handles: Vec<_> = clients
                .iter_mut()
                .map(|cl| {
                    let (barrier, global, start) = (&barrier, &global, &start);
                    s.spawn(move || {
                        let mut rep = ClientRound::default();
                        let pulled = cl.pull(round, &mut rep);
                        // every pull lands before any push of this round; the
                        // wait counts as pull time so the phases tile the round
                        barrier.wait();
                        rep.wall.pull_ms = start.elapsed().as_secs_f64() * 1e3;
                        pulled?;
                        let model = cl.train_and_push(global, round, observer, &mut rep)?;
                        Ok((model, rep))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Validation("client thread panicked".into()))))
                .collect()
        });
        let mut models = Vec::with_capacity(results.len());
        let mut reps = Vec::with_capacity(results.len());
        for r in results {
            let (m, rep) = r?;
            models.push(m);
            reps.push(rep);
        }

        let agg_start = Instant::now();
        global = fedavg(&models, &weights)?;
        let agg_wall_ms = agg_start.elapsed().as_secs_f64() * 1e3;
        let round_wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let upload = Traffic { calls: 1, requests: participating as u64, bytes: (4 * n_params * participating) as u64 };
        let agg_modeled_ms = cost.compute_ms((n_params * participating) as u64) + cost.traffic_ms(&upload);
        let slowest = reps.iter().map(|r| r.modeled.total_ms()).fold(0.0, f64::max);
        let round_modeled_ms = slowest + agg_modeled_ms;
        cum_wall += round_wall_ms / 1e3;
        cum_modeled += round_modeled_ms / 1e3;

        let acc = evaluator.accuracy(&global)?;
        accs.push(acc);
        let acc_ma5 = *moving_average(&accs, 5).last().expect("non-empty");
        log::info!("round={round} acc={acc:.4} acc_ma5={acc_ma5:.4} wall_ms={round_wall_ms:.1} modeled_ms={round_modeled_ms:.1}");
        let record = RoundRecord {
            round,
            clients: reps,
            agg_wall_ms,
            agg_modeled_ms,
            round_wall_ms,
            round_modeled_ms,
            acc,
            acc_ma5,
            cum_wall_s: cum_wall,
            cum_modeled_s: cum_modeled,
        };
        observer.round_end(&record, &global);
        records.push(record);
    }

    let final_stats = admin.stats()?;
    Ok(SessionOutput { records, model: global, clock: cfg.clock_kind(), pretrain_stats, final_stats, client_sets })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gnn::LayerKind;
    use crate::synth::{generate_sbm, SbmParams};

    fn random_model(seed: u64) -> GnnModel {
        GnnModel::new(LayerKind::GraphConv, 2, 3, 4, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn fedavg_small_cases() {
        let m = random_model(1);
        let same = fedavg(&[m.clone(), m.clone()], &[1.0, 3.0]).unwrap();
        for (a, b) in same.params().iter().zip(m.params()) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
        let mut a = m.clone();
        let mut b = m.clone();
        for p in a.params_mut() {
            p.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = if i % 2 == 0 { 1.0 } else { 3.0 });
        }
        for p in b.params_mut() {
            p.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = if i % 2 == 0 { 3.0 } else { 5.0 });
        }
        let avg = fedavg(&[a, b], &[1.0, 1.0]).unwrap();
        for p in avg.params() {
            for (i, &x) in p.data().iter().enumerate() {
                assert_eq!(x, if i % 2 == 0 { 2.0 } else { 4.0 });
            }
        }
        assert!(fedavg(std::slice::from_ref(&m), &[0.0]).is_err());
        assert!(fedavg(&[m.clone(), random_model(2)], &[1.0]).is_err());
        let other = GnnModel::new(LayerKind::GraphConv, 2, 3, 5, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(fedavg(&[m, other], &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }

    #[test]
    fn evaluator_matches_dense_gcn() {
        let g = generate_sbm(&SbmParams { n: 30, blocks: 3, p_in: 0.3, p_out: 0.05, feat_dim: 3, ..Default::default() })
            .unwrap();
        let model = GnnModel::new(LayerKind::GraphConv, 2, 3, 4, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ev = Evaluator::new(&g, 2).unwrap();
        let got = ev.logits(&model).unwrap();

        // dense D^-1/2 (A + I) D^-1/2 H W, ReLU on the hidden layer
        let n = g.num_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 1.0;
        }
        for &(s, d) in g.edges() {
            a[d][s] = 1.0;
        }
        let deg: Vec<f64> = (0..n).map(|i| g.in_neighbors(i).len() as f64 + 1.0).collect();
        let mut h: Vec<Vec<f64>> = (0..n).map(|i| g.features().row(i).to_vec()).collect();
        for l in 0..2 {
            let w = match model.layer(l + 1) {
                crate::gnn::LayerWeights::GraphConv { weight } => weight.clone(),
                _ => unreachable!(),
            };
            let mut next = vec![vec![0.0; w.cols()]; n];
            for u in 0..n {
                let mut agg = vec![0.0; w.rows()];
                for v in 0..n {
                    if a[u][v] != 0.0 {
                        let c = 1.0 / (deg[u] * deg[v]).sqrt();
                        for k in 0..w.rows() {
                            agg[k] += c * h[v][k];
                        }
                    }
                }
                for j in 0..w.cols() {
                    let x: f64 = (0..w.rows()).map(|k| agg[k] * w.get(k, j)).sum();
                    next[u][j] = if l == 0 { x.max(0.0) } else { x };
                }
            }
            h = next;
        }
        for u in 0..n {
            for j in 0..3 {
                assert!((got.get(u, j) - h[u][j]).abs() < 1e-12);
            }
        }
        let acc = ev.accuracy(&model).unwrap();
        let manual = g.test_mask().iter().filter(|&&v| argmax(&h[v]) == g.labels()[v] as usize).count() as f64
            / g.test_mask().len() as f64;
        assert_eq!(acc, manual);
    }

    #[test]
    fn random_model_is_near_chance() {
        let g = generate_sbm(&SbmParams { n: 1000, blocks: 4, noise: 0.0, ..Default::default() }).unwrap();
        // all-zero weights give constant logits, so argmax is always class 0
        let mut m = GnnModel::new(LayerKind::GraphConv, 2, g.feature_dim(), 8, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in m.params_mut() {
            p.scale(0.0);
        }
        let acc = Evaluator::new(&g, 2).unwrap().accuracy(&m).unwrap();
        let p = 0.25;
        let sd = (p * (1.0 - p) / g.test_mask().len() as f64).sqrt();
        assert!((acc - p).abs() < 4.0 * sd, "{acc}");
    }

    fn small_session(cfg: &TrainConfig) -> (Graph, PartitionAssignment) {
        let g = generate_sbm(&SbmParams { n: 240, seed: 3, ..Default::default() }).unwrap();
        let a = partition_for(&g, cfg).unwrap();
        (g, a)
    }

    #[test]
    fn zero_rounds_only_pretrains() {
        let cfg = TrainConfig { rounds: 0, ..TrainConfig::default() };
        let (g, a) = small_session(&cfg);
        let out = run_session(&g, &a, &cfg, &NoObserver).unwrap();
        assert!(out.records.is_empty());
        let pushes: usize = out.client_sets.iter().map(|c| c.1).sum();
        assert_eq!(out.pretrain_stats.total_embeddings() as usize, pushes * (cfg.layers - 1));
    }

    #[test]
    fn single_client_loss_falls_and_time_grows() {
        let cfg = TrainConfig { strategy: crate::config::Strategy::D, clients: 1, rounds: 8, lr: 0.01, ..Default::default() };
        let (g, a) = small_session(&cfg);
        let out = run_session(&g, &a, &cfg, &NoObserver).unwrap();
        let loss: Vec<f64> = out.records.iter().map(|r| r.clients[0].train_loss).collect();
        assert!(loss.last().unwrap() < &(loss[0] * 0.8), "{loss:?}");
        for w in out.records.windows(2) {
            assert!(w[1].cum_modeled_s > w[0].cum_modeled_s);
            assert!(w[1].cum_wall_s > w[0].cum_wall_s);
        }
        assert!(out.records.iter().all(|r| (0.0..=1.0).contains(&r.acc)));
    }

    #[test]
    fn push_sets_follow_pruning() {
        let cfg = TrainConfig { retention: Some(1), strategy: crate::config::Strategy::P, ..Default::default() };
        let (g, a) = small_session(&cfg);
        let plans = plan_clients(&g, &a, &cfg).unwrap();
        for (c, p) in plans.iter().enumerate() {
            for &n in p.subgraph.push_nodes() {
                assert_eq!(a.part_of(n), c);
                assert!(plans.iter().any(|q| q.subgraph.remote_nodes().contains(&n)));
            }
            assert_eq!(p.prefetch, p.subgraph.remote_nodes());
        }
    }
}
