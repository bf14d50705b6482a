//! Stochastic block model datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    /// Standard deviation of the Gaussian added to the one-hot block features.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams { n: 1200, blocks: 4, p_in: 0.05, p_out: 0.005, feat_dim: 16, noise: 0.5, seed: 0 }
    }
}

/// Block of each node: contiguous ranges, the first `n % blocks` blocks one node larger.
pub fn block_sizes(n: usize, blocks: usize) -> Vec<usize> {
    (0..blocks).map(|b| n / blocks + usize::from(b < n % blocks)).collect()
}

/// Undirected SBM stored with both edge directions. Labels are block IDs;
/// the train/test split is 60/40 within each block.
pub fn generate_sbm(p: &SbmParams) -> Result<Graph> {
    if p.blocks == 0 || p.n < p.blocks {
        return Err(Error::Config(format!("{} nodes cannot fill {} blocks", p.n, p.blocks)));
    }
    if p.feat_dim < p.blocks {
        return Err(Error::Config(format!(
            "feature dim {} is smaller than the block count {}",
            p.feat_dim, p.blocks
        )));
    }
    for (name, v) in [("p_in", p.p_in), ("p_out", p.p_out)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} = {v} is not a probability")));
        }
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be finite and non-negative", p.noise)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let sizes = block_sizes(p.n, p.blocks);
    let labels: Vec<u32> = sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b as u32, s))
        .collect();

    let mut edges = Vec::new();
    for u in 0..p.n {
        for v in (u + 1)..p.n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }

    let mut features = Matrix::zeros(p.n, p.feat_dim);
    for (u, &label) in labels.iter().enumerate() {
        let row = features.row_mut(u);
        for (j, x) in row.iter_mut().enumerate() {
            let hot = if j == label as usize { 1.0 } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            // stored as f32 on disk, so keep exactly representable values
            *x = (hot + p.noise * z) as f32 as f64;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut start = 0;
    for &s in &sizes {
        let mut members: Vec<usize> = (start..start + s).collect();
        members.shuffle(&mut rng);
        let n_train = (s as f64 * 0.6).round() as usize;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
        start += s;
    }
    Graph::new(p.n, edges, features, labels, train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{write_graph, GraphPaths};

    fn params(n: usize, blocks: usize, p_in: f64, p_out: f64) -> SbmParams {
        SbmParams { n, blocks, p_in, p_out, feat_dim: blocks.max(4), noise: 0.5, seed: 11 }
    }

    #[test]
    fn two_cliques() {
        let g = generate_sbm(&params(10, 2, 1.0, 0.0)).unwrap();
        // each clique of 5 has 5 * 4 directed edges
        assert_eq!(g.num_edges(), 40);
        for &(s, d) in g.edges() {
            assert_eq!(g.labels()[s], g.labels()[d]);
        }
    }

    #[test]
    fn edge_count_within_three_sigma() {
        let p = params(1200, 4, 0.05, 0.005);
        let g = generate_sbm(&p).unwrap();
        let sizes = block_sizes(p.n, p.blocks);
        let within: f64 = sizes.iter().map(|&s| (s * (s - 1) / 2) as f64).sum();
        let total = (p.n * (p.n - 1) / 2) as f64;
        let cross = total - within;
        let mean = within * p.p_in + cross * p.p_out;
        let var = within * p.p_in * (1.0 - p.p_in) + cross * p.p_out * (1.0 - p.p_out);
        let undirected = (g.num_edges() / 2) as f64;
        assert!((undirected - mean).abs() <= 3.0 * var.sqrt(), "{undirected} vs {mean}");
        assert_eq!(g.num_nodes(), 1200);
    }

    #[test]
    fn labels_and_split() {
        let g = generate_sbm(&params(103, 4, 0.1, 0.01)).unwrap();
        let sizes = block_sizes(103, 4);
        for (b, &s) in sizes.iter().enumerate() {
            assert_eq!(g.labels().iter().filter(|&&l| l as usize == b).count(), s);
            let tr = g.train_mask().iter().filter(|&&n| g.labels()[n] as usize == b).count();
            assert_eq!(tr, (s as f64 * 0.6).round() as usize);
        }
        assert_eq!(g.train_mask().len() + g.test_mask().len(), 103);
    }

    #[test]
    fn deterministic_files() {
        let p = params(200, 4, 0.1, 0.01);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_graph(&generate_sbm(&p).unwrap(), &GraphPaths::in_dir(a.path())).unwrap();
        write_graph(&generate_sbm(&p).unwrap(), &GraphPaths::in_dir(b.path())).unwrap();
        for f in ["edges.txt", "features.bin", "labels.bin", "train.mask", "test.mask"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(generate_sbm(&params(3, 4, 0.1, 0.1)).is_err());
        assert!(generate_sbm(&params(10, 2, 1.5, 0.1)).is_err());
        assert!(generate_sbm(&SbmParams { feat_dim: 1, ..params(10, 2, 0.5, 0.1) }).is_err());
    }
}
