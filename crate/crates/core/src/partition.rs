//! Balanced k-way edge-cut partitioning.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, PartitionAssignment};

/// Grows `k` parts by round-robin multi-source BFS from seeded random roots,
/// treating edges as undirected. A part stops growing at
/// `ceil(n / k) * (1 + slack)` nodes; nodes no BFS reaches go, one at a
/// time, to the currently smallest part.
pub fn partition_bfs_grow(graph: &Graph, k: usize, balance_slack: f64, seed: u64) -> Result<PartitionAssignment> {
    let n = graph.num_nodes();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot split {n} nodes into {k} parts")));
    }
    if balance_slack.is_nan() || balance_slack < 0.0 {
        return Err(Error::Config(format!("balance slack {balance_slack} must be non-negative")));
    }
    let cap = ((n.div_ceil(k) as f64) * (1.0 + balance_slack)).floor() as usize;
    if cap * k < n {
        return Err(Error::Config(format!("{k} parts of at most {cap} nodes cannot hold {n} nodes")));
    }

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in graph.edges() {
        neighbors[s].push(d);
        neighbors[d].push(s);
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = sample(&mut rng, n, k).into_vec();
    let mut part = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    for (p, &r) in roots.iter().enumerate() {
        part[r] = p;
        sizes[p] = 1;
        queues[p].push_back(r);
    }

    loop {
        let mut progressed = false;
        for p in 0..k {
            if sizes[p] >= cap {
                queues[p].clear();
                continue;
            }
            // claim at most one new node per part per turn
            while let Some(&u) = queues[p].front() {
                let next = neighbors[u].iter().copied().find(|&v| part[v] == usize::MAX);
                match next {
                    Some(v) => {
                        part[v] = p;
                        sizes[p] += 1;
                        queues[p].push_back(v);
                        progressed = true;
                        break;
                    }
                    None => {
                        queues[p].pop_front();
                    }
                }
            }
        }
        if !progressed {
            break;
        }
    }

    for slot in part.iter_mut() {
        if *slot == usize::MAX {
            let smallest = (0..k).min_by_key(|&p| (sizes[p], p)).expect("k >= 1");
            *slot = smallest;
            sizes[smallest] += 1;
        }
    }
    PartitionAssignment::new(part, k)
}

/// `node mod k`; a deliberately poor baseline.
pub fn hash_partition(num_nodes: usize, k: usize) -> Result<PartitionAssignment> {
    if k == 0 || k > num_nodes {
        return Err(Error::Config(format!("cannot split {num_nodes} nodes into {k} parts")));
    }
    PartitionAssignment::new((0..num_nodes).map(|v| v % k).collect(), k)
}

/// Directed edges whose endpoints lie in different parts.
pub fn edge_cut(graph: &Graph, assignment: &PartitionAssignment) -> usize {
    graph
        .edges()
        .iter()
        .filter(|&&(s, d)| assignment.part_of(s) != assignment.part_of(d))
        .count()
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::linalg::Matrix;
    use crate::synth::{generate_sbm, SbmParams};

    fn complete(n: usize) -> Graph {
        let edges = (0..n).flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d))).collect();
        Graph::new(n, edges, Matrix::zeros(n, 1), vec![0; n], vec![], vec![]).unwrap()
    }

    #[test]
    fn trivial_cases() {
        let g = complete(6);
        let one = partition_bfs_grow(&g, 1, 0.0, 3).unwrap();
        assert!(one.parts().iter().all(|&p| p == 0));
        assert_eq!(edge_cut(&g, &one), 0);
        let each = partition_bfs_grow(&g, 6, 0.0, 3).unwrap();
        assert_eq!(each.part_sizes(), vec![1; 6]);
        assert!(partition_bfs_grow(&g, 7, 0.0, 3).is_err());
        assert!(partition_bfs_grow(&g, 2, -0.5, 3).is_err());
    }

    #[test]
    fn complete_graph_cut() {
        let g = complete(4);
        let a = PartitionAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(edge_cut(&g, &a), 8);
    }

    #[test]
    fn cut_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60;
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if rng.random_bool(0.05) {
                    edges.push((s, d));
                }
            }
        }
        let g = Graph::new(n, edges.clone(), Matrix::zeros(n, 1), vec![0; n], vec![], vec![]).unwrap();
        let a = partition_bfs_grow(&g, 3, 0.1, 9).unwrap();
        let mut brute = 0;
        let mut seen = std::collections::HashSet::new();
        for &(s, d) in &edges {
            if seen.insert((s, d)) && a.part_of(s) != a.part_of(d) {
                brute += 1;
            }
        }
        assert_eq!(edge_cut(&g, &a), brute);
    }

    #[test]
    fn balanced_and_deterministic() {
        let g = generate_sbm(&SbmParams { n: 400, blocks: 4, p_in: 0.05, p_out: 0.005, feat_dim: 8, noise: 0.5, seed: 1 })
            .unwrap();
        for slack in [0.0, 0.1, 0.3] {
            let a = partition_bfs_grow(&g, 4, slack, 7).unwrap();
            let cap = ((100.0f64) * (1.0 + slack)).floor() as usize;
            assert!(a.part_sizes().iter().all(|&s| s <= cap), "{:?}", a.part_sizes());
            assert_eq!(a, partition_bfs_grow(&g, 4, slack, 7).unwrap());
        }
    }

    #[test]
    fn beats_hash_partition_on_sbm() {
        let g = generate_sbm(&SbmParams { n: 400, blocks: 4, p_in: 0.1, p_out: 0.002, feat_dim: 8, noise: 0.5, seed: 4 })
            .unwrap();
        let hash_cut = edge_cut(&g, &hash_partition(g.num_nodes(), 4).unwrap());
        for seed in 0..10 {
            let cut = edge_cut(&g, &partition_bfs_grow(&g, 4, 0.1, seed).unwrap());
            assert!(cut <= hash_cut, "seed {seed}: {cut} > {hash_cut}");
        }
    }
}
