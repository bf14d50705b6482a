#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use fedgnn_core::embed::EmbeddingServer;
use fedgnn_core::orchestrator::{RoundRecord, SessionObserver};
use fedgnn_core::{GnnModel, Graph, Matrix};
use rand::Rng;

/// Directed Erdos-Renyi graph with uniform features, random labels and a
/// random train/test split.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64, feat_dim: usize, classes: u32, train_frac: f64) -> Graph {
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(p) {
                edges.push((s, d));
            }
        }
    }
    let feats = (0..n * feat_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for v in 0..n {
        if rng.random_bool(train_frac) {
            train.push(v);
        } else {
            test.push(v);
        }
    }
    Graph::new(n, edges, Matrix::from_vec(n, feat_dim, feats).unwrap(), labels, train, test).unwrap()
}

pub type Dump = Vec<HashMap<u64, Vec<f32>>>;

pub fn dump(server: &EmbeddingServer, layers: usize) -> Dump {
    (1..layers).map(|l| server.dump_layer(l).into_iter().collect()).collect()
}

/// Keeps every epoch model and the server content after pre-training and
/// after each round.
pub struct Recorder {
    pub server: Arc<EmbeddingServer>,
    pub layers: usize,
    pub models: Mutex<HashMap<(usize, usize, usize), GnnModel>>,
    pub dumps: Mutex<Vec<Dump>>,
}

impl Recorder {
    pub fn new(server: Arc<EmbeddingServer>, layers: usize) -> Self {
        Recorder { server, layers, models: Mutex::new(HashMap::new()), dumps: Mutex::new(Vec::new()) }
    }
}

impl SessionObserver for Recorder {
    fn after_pretrain(&self, _global: &GnnModel) {
        self.dumps.lock().unwrap().push(dump(&self.server, self.layers));
    }

    fn epoch_end(&self, client: usize, round: usize, epoch: usize, model: &GnnModel) {
        self.models.lock().unwrap().insert((client, round, epoch), model.clone());
    }

    fn round_end(&self, _record: &RoundRecord, _global: &GnnModel) {
        self.dumps.lock().unwrap().push(dump(&self.server, self.layers));
    }
}
