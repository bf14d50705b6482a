//! One client's side of a round: pull, local training, push.

mod cache;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::thread::JoinHandle;
use std::time::Instant;

pub use cache::EmbeddingCache;

use crate::config::TrainConfig;
use crate::embed::EmbeddingClient;
use crate::error::{Error, Result};
use crate::gnn::{cross_entropy_backward, forward_trace, AdamState, GnnModel, Injections};
use crate::graph::Subgraph;
use crate::linalg::Matrix;
use crate::orchestrator::{ClientPlan, SessionObserver};
use crate::rng::{push_rng, train_rng};
use crate::sampler::{computation_graph_with, minibatch_iter, sample_computation_graph, ComputationGraph, Fanout};
use crate::timing::{CostModel, PhaseTimes, Traffic};

/// Pull bookkeeping for one round. Pairs are `(global node, layer)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PullAudit {
    pub minibatches: usize,
    pub prefetched: usize,
    pub on_demand_calls: usize,
    pub on_demand_entries: usize,
    /// Pairs fetched a second time within the round.
    pub duplicate_pulls: usize,
    /// Distinct remote pairs read by training forward passes.
    pub referenced: usize,
    /// Referenced pairs that were never pulled this round.
    pub uncovered: usize,
}

/// What one client did in one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientRound {
    pub client: usize,
    pub wall: PhaseTimes,
    pub modeled: PhaseTimes,
    pub emb_pulled: usize,
    pub emb_pushed: usize,
    /// Mean minibatch loss of the last epoch.
    pub train_loss: f64,
    pub audit: PullAudit,
}

/// A push forward pass with everything it needs, so it can run on its own thread.
pub struct PushJob {
    model: GnnModel,
    cg: ComputationGraph,
    inputs: Matrix,
    injections: Injections,
    ids: Vec<u64>,
    dim: usize,
}

pub struct PushOutcome {
    pub written: usize,
    pub flops: u64,
    pub traffic: Traffic,
}

impl PushJob {
    /// `h^1..h^{L-1}` of the push nodes, in layer order.
    pub fn embeddings(&self) -> Result<Vec<Matrix>> {
        let trace = forward_trace(&self.model, &self.cg, &self.inputs, &self.injections)?;
        Ok(trace.seed_embeddings(self.ids.len()))
    }

    pub fn run(self, conn: &mut EmbeddingClient) -> Result<PushOutcome> {
        let embs = self.embeddings()?;
        let flops = self.model.forward_flops(&self.cg);
        let batches = embs
            .into_iter()
            .enumerate()
            .map(|(i, m)| (i + 1, self.ids.clone(), m.data().iter().map(|&x| x as f32).collect()))
            .collect();
        let before = conn.traffic();
        let written = conn.set_many(self.dim, batches)?;
        Ok(PushOutcome { written, flops, traffic: conn.traffic().since(&before) })
    }
}

pub struct Client {
    id: usize,
    cfg: TrainConfig,
    sg: Subgraph,
    train_nodes: Vec<usize>,
    prefetch: Vec<usize>,
    push_local: Vec<usize>,
    conn: EmbeddingClient,
    push_conn: Option<EmbeddingClient>,
    cache: EmbeddingCache,
    cost: CostModel,
    audit: PullAudit,
    pulled: HashSet<(usize, usize)>,
    referenced: HashSet<(usize, usize)>,
}

impl Client {
    pub fn new(id: usize, plan: ClientPlan, cfg: &TrainConfig, conn: EmbeddingClient) -> Result<Self> {
        let sg = plan.subgraph;
        let push_local = sg
            .push_nodes()
            .iter()
            .map(|&g| sg.local_index(g).ok_or_else(|| Error::Validation(format!("push node {g} is not local"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Client {
            id,
            cfg: cfg.clone(),
            train_nodes: sg.train_nodes(),
            sg,
            prefetch: plan.prefetch,
            push_local,
            conn,
            push_conn: None,
            cache: EmbeddingCache::new(cfg.layers),
            cost: cfg.cost_model(),
            audit: PullAudit::default(),
            pulled: HashSet::new(),
            referenced: HashSet::new(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn subgraph(&self) -> &Subgraph {
        &self.sg
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn register(&mut self) -> Result<()> {
        let push = self.sg.push_nodes().to_vec();
        let pull = self.sg.remote_nodes().to_vec();
        self.conn.register(self.id, &push, &pull)
    }

    /// Seeds the server with embeddings computed on the local subgraph only.
    pub fn pretrain(&mut self, model: &GnnModel) -> Result<usize> {
        let local = self.sg.unexpanded();
        let Some(job) = self.push_job(&local, model, 0, |_, _| false)? else {
            return Ok(0);
        };
        let out = job.run(&mut self.conn)?;
        log::info!("client={} round=0 phase=push embeddings={}", self.id, out.written);
        Ok(out.written)
    }

    /// Clears the cache and fetches the round's prefetch set for every layer.
    pub fn pull(&mut self, round: usize, rep: &mut ClientRound) -> Result<()> {
        self.cache.clear();
        self.pulled.clear();
        self.referenced.clear();
        self.audit = PullAudit::default();
        rep.client = self.id;

        let start = Instant::now();
        let before = self.conn.traffic();
        let wanted = (1..self.cfg.layers).map(|l| (l, self.prefetch.clone())).collect();
        let n = self.fetch(wanted)?;
        rep.wall.pull_ms = ms(start);
        rep.modeled.pull_ms = self.cost.traffic_ms(&self.conn.traffic().since(&before));
        rep.emb_pulled = n;
        self.audit.prefetched = n;
        log::info!("client={} round={round} phase=pull ms={:.3} embeddings={n}", self.id, rep.wall.pull_ms);
        Ok(())
    }

    fn fetch(&mut self, wanted: Vec<(usize, Vec<usize>)>) -> Result<usize> {
        let wanted: Vec<_> = wanted.into_iter().filter(|(_, ids)| !ids.is_empty()).collect();
        if wanted.is_empty() {
            return Ok(0);
        }
        let batches = wanted.iter().map(|(l, ids)| (*l, ids.iter().map(|&x| x as u64).collect())).collect();
        let got = self.conn.get_many(batches)?;
        let mut n = 0;
        for ((l, ids), f) in wanted.iter().zip(&got) {
            n += self.cache.fill(*l, f)?;
            for &id in ids {
                if !self.pulled.insert((id, *l)) {
                    self.audit.duplicate_pulls += 1;
                }
            }
        }
        Ok(n)
    }

    /// Cached rows for every remote node `cg` reads. With prefetching, misses
    /// are fetched in one pipelined call; otherwise a miss is an error.
    fn injections_for(&mut self, cg: &ComputationGraph, rep: &mut ClientRound) -> Result<Injections> {
        let reqs = cg.remote_requirements();
        let mut missing: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &(v, l) in &reqs {
            let g = self.sg.global_id(v);
            self.referenced.insert((g, l));
            if !self.cache.contains(l, g) {
                missing.entry(l).or_default().insert(g);
            }
        }
        if !missing.is_empty() {
            if !self.cfg.strategy.prefetches() {
                let missing = missing.into_iter().flat_map(|(l, s)| s.into_iter().map(move |g| (g, l))).collect();
                return Err(Error::CacheMiss { missing });
            }
            let n = self.fetch(missing.into_iter().map(|(l, s)| (l, s.into_iter().collect())).collect())?;
            self.audit.on_demand_calls += 1;
            self.audit.on_demand_entries += n;
            rep.emb_pulled += n;
        }
        let mut inj = Injections::new();
        for (v, l) in reqs {
            let g = self.sg.global_id(v);
            let row = self.cache.lookup(l, g).ok_or_else(|| Error::CacheMiss { missing: vec![(g, l)] })?;
            inj.insert(l, v, row.to_vec());
        }
        Ok(inj)
    }

    /// The push forward pass over `sg`, admitting remote node `v` at layer `l`
    /// only when `allow(v, l)`.
    fn push_job(
        &self,
        sg: &Subgraph,
        model: &GnnModel,
        round: usize,
        allow: impl Fn(usize, usize) -> bool,
    ) -> Result<Option<PushJob>> {
        if self.push_local.is_empty() || self.cfg.layers < 2 {
            return Ok(None);
        }
        let fanout = self.cfg.push_fanout.map_or(Fanout::Full, Fanout::Limited);
        let mut rng = push_rng(self.cfg.seed, self.id, round);
        let cg = computation_graph_with(sg, &self.push_local, fanout, self.cfg.layers - 1, allow, &mut rng)?;
        let inputs = sg.features().gather_rows(&cg.blocks[0].input_nodes);
        let mut injections = Injections::new();
        for (v, l) in cg.remote_requirements() {
            let row = self
                .cache
                .get(l, sg.global_id(v))
                .ok_or_else(|| Error::CacheMiss { missing: vec![(sg.global_id(v), l)] })?;
            injections.insert(l, v, row.to_vec());
        }
        Ok(Some(PushJob {
            model: model.clone(),
            cg,
            inputs,
            injections,
            ids: self.sg.push_nodes().iter().map(|&g| g as u64).collect(),
            dim: self.cfg.hidden,
        }))
    }

    /// The push job for `model` this round, reading remote inputs from the cache.
    pub fn round_push_job(&self, model: &GnnModel, round: usize) -> Result<Option<PushJob>> {
        let (sg, cache) = (&self.sg, &self.cache);
        self.push_job(sg, model, round, |v, l| cache.contains(l, sg.global_id(v)))
    }

    /// Runs the local epochs starting from `global`, then pushes. With an
    /// overlapping strategy the push of the epoch `ε-1` model runs on a second
    /// connection during the last epoch and is joined here.
    pub fn train_and_push(
        &mut self,
        global: &GnnModel,
        round: usize,
        observer: &dyn SessionObserver,
        rep: &mut ClientRound,
    ) -> Result<GnnModel> {
        let mut model = global.clone();
        let mut adam = AdamState::new(&model, self.cfg.lr);
        let epochs = self.cfg.epochs;
        let overlap = self.cfg.strategy.overlaps();
        let mut pending: Option<JoinHandle<(EmbeddingClient, Result<PushOutcome>)>> = None;

        let start = Instant::now();
        let mut last_epoch_ms = 0.0;
        for epoch in 1..=epochs {
            let mut rng = train_rng(self.cfg.seed, self.id, round, epoch);
            let batches = minibatch_iter(&self.train_nodes, self.cfg.batch_size, &mut rng);
            let mut epoch_ms = 0.0;
            let mut loss_sum = 0.0;
            for batch in &batches {
                let cg = sample_computation_graph(&self.sg, batch, self.cfg.fanout, self.cfg.layers, &mut rng)?;
                let before = self.conn.traffic();
                let inj = self.injections_for(&cg, rep)?;
                epoch_ms += self.cost.traffic_ms(&self.conn.traffic().since(&before));
                let inputs = self.sg.features().gather_rows(&cg.blocks[0].input_nodes);
                let labels: Vec<u32> = cg.seeds.iter().map(|&s| self.sg.label(s)).collect();
                let (loss, grads) = cross_entropy_backward(&model, &cg, &inputs, &inj, &labels)?;
                adam.step(&mut model, &grads)?;
                epoch_ms += self.cost.compute_ms(3 * model.forward_flops(&cg));
                loss_sum += loss;
                self.audit.minibatches += 1;
            }
            rep.train_loss = if batches.is_empty() { 0.0 } else { loss_sum / batches.len() as f64 };
            rep.modeled.train_ms += epoch_ms;
            last_epoch_ms = epoch_ms;
            observer.epoch_end(self.id, round, epoch, &model);

            if overlap && epoch + 1 == epochs {
                if let Some(job) = self.round_push_job(&model, round)? {
                    let mut conn = match self.push_conn.take() {
                        Some(c) => c,
                        None => self.conn.connect_again()?,
                    };
                    pending = Some(std::thread::spawn(move || {
                        let r = job.run(&mut conn);
                        (conn, r)
                    }));
                }
            }
        }
        rep.wall.train_ms = ms(start);

        let start = Instant::now();
        let outcome = match pending {
            Some(h) => {
                let (conn, r) = h.join().map_err(|_| Error::Transport("push thread panicked".into()))?;
                self.push_conn = Some(conn);
                Some(r?)
            }
            None if !overlap => match self.round_push_job(&model, round)? {
                Some(job) => Some(job.run(&mut self.conn)?),
                None => None,
            },
            None => None,
        };
        rep.wall.push_ms = ms(start);
        if let Some(o) = outcome {
            let cost = self.cost.compute_ms(o.flops) + self.cost.traffic_ms(&o.traffic);
            rep.modeled.push_ms = if overlap { (cost - last_epoch_ms).max(0.0) } else { cost };
            rep.emb_pushed = o.written;
        }

        self.audit.referenced = self.referenced.len();
        self.audit.uncovered = self.referenced.iter().filter(|p| !self.pulled.contains(p)).count();
        rep.audit = self.audit;
        log::info!(
            "client={} round={round} phase=train ms={:.3} embeddings={}",
            self.id,
            rep.wall.train_ms,
            self.audit.on_demand_entries
        );
        log::info!("client={} round={round} phase=push ms={:.3} embeddings={}", self.id, rep.wall.push_ms, rep.emb_pushed);
        Ok(model)
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
