//! Global graph, per-client subgraphs and the on-disk dataset formats.

mod io;
mod subgraph;

pub use io::{load_graph, read_assignment, write_assignment, write_graph, GraphPaths};
pub use subgraph::{build_subgraphs, Subgraph};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Directed graph with node features, labels and train/test masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Sorted by `(src, dst)`, no duplicates.
    edges: Vec<(usize, usize)>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
    features: Matrix,
    labels: Vec<u32>,
    num_classes: usize,
    train_mask: Vec<usize>,
    test_mask: Vec<usize>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        mut edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<u32>,
        train_mask: Vec<usize>,
        test_mask: Vec<usize>,
    ) -> Result<Self> {
        for &(s, d) in &edges {
            if s >= num_nodes || d >= num_nodes {
                return Err(Error::Validation(format!(
                    "edge ({s}, {d}) references a node outside 0..{num_nodes}"
                )));
            }
        }
        if features.rows() != num_nodes {
            return Err(Error::Validation(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        features.ensure_finite("node features")?;
        if labels.len() != num_nodes {
            return Err(Error::Validation(format!("{} labels for {num_nodes} nodes", labels.len())));
        }
        let train: BTreeSet<usize> = train_mask.into_iter().collect();
        let test: BTreeSet<usize> = test_mask.into_iter().collect();
        if let Some(&bad) = train.iter().chain(test.iter()).find(|&&n| n >= num_nodes) {
            return Err(Error::Validation(format!("mask entry {bad} out of range")));
        }
        if let Some(n) = train.intersection(&test).next() {
            return Err(Error::Validation(format!("node {n} is in both train and test masks")));
        }
        edges.sort_unstable();
        edges.dedup();

        let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let (in_offsets, in_sources) = in_csr(num_nodes, &edges);
        Ok(Graph {
            num_nodes,
            edges,
            in_offsets,
            in_sources,
            features,
            labels,
            num_classes,
            train_mask: train.into_iter().collect(),
            test_mask: test.into_iter().collect(),
        })
    }

    /// Same graph with every edge present in both directions.
    pub fn symmetrized(&self) -> Graph {
        let mut edges = self.edges.clone();
        edges.extend(self.edges.iter().map(|&(s, d)| (d, s)));
        edges.sort_unstable();
        edges.dedup();
        let (in_offsets, in_sources) = in_csr(self.num_nodes, &edges);
        Graph { edges, in_offsets, in_sources, ..self.clone() }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sources of edges ending at `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_sources[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn train_mask(&self) -> &[usize] {
        &self.train_mask
    }

    pub fn test_mask(&self) -> &[usize] {
        &self.test_mask
    }
}

/// CSR over in-edges: sources of node `v` live in `sources[offsets[v]..offsets[v + 1]]`.
pub(crate) fn in_csr(num_nodes: usize, edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut counts = vec![0usize; num_nodes + 1];
    for &(_, d) in edges {
        counts[d + 1] += 1;
    }
    for i in 0..num_nodes {
        counts[i + 1] += counts[i];
    }
    let offsets = counts.clone();
    let mut fill = counts;
    let mut sources = vec![0usize; edges.len()];
    let mut sorted: Vec<(usize, usize)> = edges.to_vec();
    sorted.sort_unstable_by_key(|&(s, d)| (d, s));
    for (s, d) in sorted {
        sources[fill[d]] = s;
        fill[d] += 1;
    }
    (offsets, sources)
}

/// Node-to-client map produced by a partitioner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    part_of: Vec<usize>,
    num_parts: usize,
}

impl PartitionAssignment {
    pub fn new(part_of: Vec<usize>, num_parts: usize) -> Result<Self> {
        let mut sizes = vec![0usize; num_parts];
        for (node, &p) in part_of.iter().enumerate() {
            if p >= num_parts {
                return Err(Error::Validation(format!("node {node} assigned to part {p} >= {num_parts}")));
            }
            sizes[p] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Validation(format!("part {empty} is empty")));
        }
        Ok(PartitionAssignment { part_of, num_parts })
    }

    pub fn part_of(&self, node: usize) -> usize {
        self.part_of[node]
    }

    pub fn parts(&self) -> &[usize] {
        &self.part_of
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn num_nodes(&self) -> usize {
        self.part_of.len()
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_parts];
        for &p in &self.part_of {
            sizes[p] += 1;
        }
        sizes
    }

    /// Nodes of part `p`, ascending.
    pub fn members(&self, p: usize) -> Vec<usize> {
        self.part_of.iter().enumerate().filter(|(_, &q)| q == p).map(|(n, _)| n).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A small three-client example:
    /// client 0 owns A..D (0..3), client 1 owns E, H (4, 7), client 2 owns F, G (5, 6).
    pub(crate) fn eight_node_graph() -> (Graph, PartitionAssignment) {
        let (a, b, c, d, e, f, g, h) = (0, 1, 2, 3, 4, 5, 6, 7);
        let edges = vec![
            (b, a),
            (c, a),
            (e, a),
            (d, b),
            (a, c),
            (d, c),
            (f, c),
            (a, h),
            (f, e),
            (h, e),
            (g, h),
            (b, f),
            (e, g),
            (h, g),
            (f, g),
        ];
        let n = 8;
        let mut feats = Matrix::zeros(n, 2);
        for i in 0..n {
            feats.set(i, 0, i as f64);
            feats.set(i, 1, 1.0);
        }
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let graph = Graph::new(n, edges, feats, labels, vec![0, 1, 2, 4, 5], vec![3, 6, 7]).unwrap();
        let assignment = PartitionAssignment::new(vec![0, 0, 0, 0, 1, 2, 2, 1], 3).unwrap();
        (graph, assignment)
    }

    pub(crate) fn eight_node_client0() -> Subgraph {
        let (graph, assignment) = eight_node_graph();
        let subs = build_subgraphs(&graph, &assignment).unwrap();
        let candidates = subs[0].pull_candidates().to_vec();
        subs[0].expand(&candidates).unwrap()
    }

    #[test]
    fn new_validates() {
        let f = Matrix::zeros(3, 1);
        assert!(Graph::new(3, vec![(0, 3)], f.clone(), vec![0; 3], vec![], vec![]).is_err());
        assert!(Graph::new(3, vec![], f.clone(), vec![0; 2], vec![], vec![]).is_err());
        assert!(Graph::new(3, vec![], f.clone(), vec![0; 3], vec![1], vec![1]).is_err());
        let g = Graph::new(3, vec![], f, vec![0; 3], vec![0], vec![1]).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn in_neighbors_sorted() {
        let (g, _) = eight_node_graph();
        assert_eq!(g.in_neighbors(0), &[1, 2, 4]);
        assert_eq!(g.in_neighbors(6), &[4, 5, 7]);
        let s = g.symmetrized();
        assert_eq!(s.in_neighbors(0), &[1, 2, 4, 7]);
    }

    #[test]
    fn assignment_rejects_empty_part() {
        assert!(PartitionAssignment::new(vec![0, 0, 2], 3).is_err());
        assert!(PartitionAssignment::new(vec![0, 1, 3], 3).is_err());
    }
}
