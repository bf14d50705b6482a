//! Shared fixtures for the benchmarks.

use fedgnn_core::graph::build_subgraphs;
use fedgnn_core::orchestrator::partition_for;
use fedgnn_core::synth::{generate_sbm, SbmParams};
use fedgnn_core::{Subgraph, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Client 0 of the default four-way split, fully expanded.
pub fn client_subgraph(n: usize) -> Subgraph {
    let g = generate_sbm(&SbmParams { n, ..SbmParams::default() }).expect("sbm");
    let a = partition_for(&g, &TrainConfig::default()).expect("partition");
    let sg = build_subgraphs(&g, &a).expect("subgraphs").remove(0);
    sg.expand(sg.pull_candidates()).expect("expand")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f32> {
    (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}
