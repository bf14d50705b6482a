use std::collections::{BTreeSet, HashMap};

use super::{in_csr, Graph, PartitionAssignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One client's view of the graph.
///
/// Local indices put the client's own nodes first (ascending global ID)
/// followed by the retained remote nodes (ascending global ID). Only
/// `remote -> local` cross-client edges are kept: remote nodes are never
/// expanded, so their own in-edges are irrelevant.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    client_id: usize,
    local_nodes: Vec<usize>,
    remote_nodes: Vec<usize>,
    push_nodes: Vec<usize>,
    pull_candidates: Vec<usize>,
    /// Global `(src, dst)`, both endpoints local.
    local_edges: Vec<(usize, usize)>,
    /// Every cross-client edge into this client, global `(remote src, local dst)`.
    candidate_edges: Vec<(usize, usize)>,
    /// The retained subset of `candidate_edges`.
    remote_edges: Vec<(usize, usize)>,
    local_features: Matrix,
    local_labels: Vec<u32>,
    local_train: Vec<usize>,
    local_test: Vec<usize>,

    index: HashMap<usize, usize>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
    features: Matrix,
    is_train: Vec<bool>,
}

/// Splits `graph` into one unexpanded subgraph per part, recording each
/// client's push nodes, pull candidates and incoming cross-client edges.
pub fn build_subgraphs(graph: &Graph, assignment: &PartitionAssignment) -> Result<Vec<Subgraph>> {
    if assignment.num_nodes() != graph.num_nodes() {
        return Err(Error::Validation(format!(
            "assignment covers {} nodes, graph has {}",
            assignment.num_nodes(),
            graph.num_nodes()
        )));
    }
    let k = assignment.num_parts();
    let mut local_nodes: Vec<Vec<usize>> = vec![Vec::new(); k];
    for n in 0..graph.num_nodes() {
        local_nodes[assignment.part_of(n)].push(n);
    }
    let mut local_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    let mut cross_in: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    let mut push: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for &(s, d) in graph.edges() {
        let (ps, pd) = (assignment.part_of(s), assignment.part_of(d));
        if ps == pd {
            local_edges[pd].push((s, d));
        } else {
            cross_in[pd].push((s, d));
            push[ps].insert(s);
        }
    }
    let train: BTreeSet<usize> = graph.train_mask().iter().copied().collect();
    let test: BTreeSet<usize> = graph.test_mask().iter().copied().collect();

    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let nodes = std::mem::take(&mut local_nodes[c]);
        let local_features = graph.features().gather_rows(&nodes);
        let local_labels = nodes.iter().map(|&n| graph.labels()[n]).collect();
        let local_train = nodes.iter().filter(|n| train.contains(n)).copied().collect();
        let local_test = nodes.iter().filter(|n| test.contains(n)).copied().collect();
        let candidates: BTreeSet<usize> = cross_in[c].iter().map(|&(s, _)| s).collect();
        let mut sg = Subgraph {
            client_id: c,
            local_nodes: nodes,
            remote_nodes: Vec::new(),
            push_nodes: push[c].iter().copied().collect(),
            pull_candidates: candidates.into_iter().collect(),
            local_edges: std::mem::take(&mut local_edges[c]),
            candidate_edges: std::mem::take(&mut cross_in[c]),
            remote_edges: Vec::new(),
            local_features,
            local_labels,
            local_train,
            local_test,
            index: HashMap::new(),
            in_offsets: Vec::new(),
            in_sources: Vec::new(),
            features: Matrix::zeros(0, 0),
            is_train: Vec::new(),
        };
        sg.candidate_edges.sort_unstable();
        sg.rebuild();
        out.push(sg);
    }
    Ok(out)
}

impl Subgraph {
    fn rebuild(&mut self) {
        self.index.clear();
        for (i, &g) in self.local_nodes.iter().chain(&self.remote_nodes).enumerate() {
            self.index.insert(g, i);
        }
        let n = self.local_nodes.len() + self.remote_nodes.len();
        let edges: Vec<(usize, usize)> = self
            .local_edges
            .iter()
            .chain(&self.remote_edges)
            .map(|(s, d)| (self.index[s], self.index[d]))
            .collect();
        let (offsets, sources) = in_csr(n, &edges);
        self.in_offsets = offsets;
        self.in_sources = sources;

        let mut features = Matrix::zeros(n, self.local_features.cols());
        for i in 0..self.local_nodes.len() {
            features.row_mut(i).copy_from_slice(self.local_features.row(i));
        }
        self.features = features;

        let mut is_train = vec![false; n];
        for g in &self.local_train {
            is_train[self.index[g]] = true;
        }
        self.is_train = is_train;
    }

    /// Adds `retained` pull candidates together with all of their edges into this client.
    pub fn expand(&self, retained: &[usize]) -> Result<Subgraph> {
        let wanted: BTreeSet<usize> = retained.iter().copied().collect();
        let with_edges: BTreeSet<usize> = self.candidate_edges.iter().map(|&(s, _)| s).collect();
        if let Some(bad) = wanted.iter().find(|n| !with_edges.contains(n)) {
            return Err(Error::Validation(format!(
                "node {bad} has no edge into client {}",
                self.client_id
            )));
        }
        let edges = self
            .candidate_edges
            .iter()
            .filter(|(s, _)| wanted.contains(s))
            .copied()
            .collect();
        self.with_remote_edges(edges)
    }

    /// Replaces the expansion with exactly `edges` (a subset of the candidate
    /// cross-client edges). The remote node set becomes their sources.
    pub fn with_remote_edges(&self, mut edges: Vec<(usize, usize)>) -> Result<Subgraph> {
        edges.sort_unstable();
        edges.dedup();
        for e in &edges {
            if self.candidate_edges.binary_search(e).is_err() {
                return Err(Error::Validation(format!(
                    "edge {e:?} is not a cross-client edge into client {}",
                    self.client_id
                )));
            }
        }
        let remote: BTreeSet<usize> = edges.iter().map(|&(s, _)| s).collect();
        let mut sg = self.clone();
        sg.remote_nodes = remote.into_iter().collect();
        sg.remote_edges = edges;
        sg.rebuild();
        Ok(sg)
    }

    /// The subgraph before any expansion.
    pub fn unexpanded(&self) -> Subgraph {
        self.with_remote_edges(Vec::new()).expect("empty expansion is always valid")
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn num_local(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.local_nodes.len() + self.remote_nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.local_edges.len() + self.remote_edges.len()
    }

    #[inline]
    pub fn is_local(&self, idx: usize) -> bool {
        idx < self.local_nodes.len()
    }

    #[inline]
    pub fn is_train(&self, idx: usize) -> bool {
        self.is_train.get(idx).copied().unwrap_or(false)
    }

    pub fn global_id(&self, idx: usize) -> usize {
        if idx < self.local_nodes.len() {
            self.local_nodes[idx]
        } else {
            self.remote_nodes[idx - self.local_nodes.len()]
        }
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.index.get(&global).copied()
    }

    /// In-neighbours of a local index, as local indices (ascending).
    pub fn in_neighbors(&self, idx: usize) -> &[usize] {
        &self.in_sources[self.in_offsets[idx]..self.in_offsets[idx + 1]]
    }

    /// All edges as local-index pairs.
    pub fn edges_local(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|d| self.in_neighbors(d).iter().map(move |&s| (s, d)))
            .collect()
    }

    pub fn local_nodes(&self) -> &[usize] {
        &self.local_nodes
    }

    pub fn remote_nodes(&self) -> &[usize] {
        &self.remote_nodes
    }

    pub fn push_nodes(&self) -> &[usize] {
        &self.push_nodes
    }

    /// Restricts the push set to nodes some other client actually retained.
    pub fn set_push_nodes(&mut self, nodes: Vec<usize>) -> Result<()> {
        let mut nodes = nodes;
        nodes.sort_unstable();
        nodes.dedup();
        if let Some(bad) = nodes.iter().find(|n| self.local_nodes.binary_search(n).is_err()) {
            return Err(Error::Validation(format!(
                "push node {bad} is not local to client {}",
                self.client_id
            )));
        }
        self.push_nodes = nodes;
        Ok(())
    }

    pub fn pull_candidates(&self) -> &[usize] {
        &self.pull_candidates
    }

    pub fn candidate_edges(&self) -> &[(usize, usize)] {
        &self.candidate_edges
    }

    pub fn remote_edges(&self) -> &[(usize, usize)] {
        &self.remote_edges
    }

    pub fn local_edges(&self) -> &[(usize, usize)] {
        &self.local_edges
    }

    /// Feature rows by local index; remote rows are zero.
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.local_labels[idx]
    }

    /// Local indices of training vertices.
    pub fn train_nodes(&self) -> Vec<usize> {
        self.local_train.iter().map(|g| self.index[g]).collect()
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        self.local_test.iter().map(|g| self.index[g]).collect()
    }

    pub fn num_train(&self) -> usize {
        self.local_train.len()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::tests::eight_node_graph;

    fn random_graph(n: usize, p: f64, seed: u64) -> (Graph, PartitionAssignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.random_bool(p) {
                    edges.push((s, d));
                }
            }
        }
        let feats = Matrix::zeros(n, 1);
        let g = Graph::new(n, edges, feats, vec![0; n], (0..n / 2).collect(), vec![]).unwrap();
        let k = 4;
        let mut part: Vec<usize> = (0..n).map(|i| i % k).collect();
        for p in part.iter_mut() {
            if rng.random_bool(0.3) {
                *p = rng.random_range(0..k);
            }
        }
        part[..k].copy_from_slice(&[0, 1, 2, 3]);
        (g, PartitionAssignment::new(part, k).unwrap())
    }

    #[test]
    fn single_partition_has_no_boundaries() {
        let (g, _) = eight_node_graph();
        let a = PartitionAssignment::new(vec![0; 8], 1).unwrap();
        let subs = build_subgraphs(&g, &a).unwrap();
        assert!(subs[0].push_nodes().is_empty());
        assert!(subs[0].pull_candidates().is_empty());
        assert_eq!(subs[0].num_edges(), g.num_edges());
    }

    #[test]
    fn single_cross_edge() {
        let f = Matrix::zeros(2, 1);
        let g = Graph::new(2, vec![(0, 1)], f, vec![0, 0], vec![], vec![]).unwrap();
        let a = PartitionAssignment::new(vec![0, 1], 2).unwrap();
        let subs = build_subgraphs(&g, &a).unwrap();
        assert_eq!(subs[0].push_nodes(), &[0]);
        assert!(subs[0].pull_candidates().is_empty());
        assert_eq!(subs[1].pull_candidates(), &[0]);
        assert!(subs[1].push_nodes().is_empty());
    }

    #[test]
    fn example_pull_sets() {
        let (g, a) = eight_node_graph();
        let subs = build_subgraphs(&g, &a).unwrap();
        assert_eq!(subs[0].pull_candidates(), &[4, 5]); // E, F
        assert_eq!(subs[1].pull_candidates(), &[0, 5, 6]); // A, F, G
        assert_eq!(subs[2].pull_candidates(), &[1, 4, 7]); // B, E, H
        assert_eq!(subs[0].push_nodes(), &[0, 1]); // A, B
    }

    #[test]
    fn boundary_sets_match_edge_scan() {
        for seed in 0..5 {
            let (g, a) = random_graph(200, 0.02, seed);
            let subs = build_subgraphs(&g, &a).unwrap();
            for (c, sg) in subs.iter().enumerate() {
                let mut push = BTreeSet::new();
                let mut pull = BTreeSet::new();
                for s in 0..g.num_nodes() {
                    for d in 0..g.num_nodes() {
                        if g.edges().binary_search(&(s, d)).is_ok() {
                            if a.part_of(s) == c && a.part_of(d) != c {
                                push.insert(s);
                            }
                            if a.part_of(d) == c && a.part_of(s) != c {
                                pull.insert(s);
                            }
                        }
                    }
                }
                assert_eq!(sg.push_nodes(), push.into_iter().collect::<Vec<_>>().as_slice());
                assert_eq!(sg.pull_candidates(), pull.into_iter().collect::<Vec<_>>().as_slice());
            }
        }
    }

    #[test]
    fn expansion_counts_match_brute_force() {
        let (g, a) = random_graph(200, 0.02, 11);
        let subs = build_subgraphs(&g, &a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sg in &subs {
            let retained: Vec<usize> =
                sg.pull_candidates().iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            let ex = sg.expand(&retained).unwrap();
            let c = sg.client_id();
            let local_count = (0..g.num_nodes()).filter(|&n| a.part_of(n) == c).count();
            let edge_count = g
                .edges()
                .iter()
                .filter(|&&(s, d)| {
                    a.part_of(d) == c && (a.part_of(s) == c || retained.contains(&s))
                })
                .count();
            assert_eq!(ex.num_nodes(), local_count + retained.len());
            assert_eq!(ex.num_edges(), edge_count);
            // id map is a bijection
            for i in 0..ex.num_nodes() {
                assert_eq!(ex.local_index(ex.global_id(i)), Some(i));
            }
            // remote rows are zero
            for i in ex.num_local()..ex.num_nodes() {
                assert!(ex.features().row(i).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn expansion_edge_cases() {
        let (g, a) = eight_node_graph();
        let subs = build_subgraphs(&g, &a).unwrap();
        let none = subs[0].expand(&[]).unwrap();
        assert_eq!(none, subs[0]);
        let all = subs[0].expand(subs[0].pull_candidates()).unwrap();
        assert_eq!(all.remote_nodes(), subs[0].pull_candidates());
        assert_eq!(all.remote_edges(), subs[0].candidate_edges());
        // G has no edge into client 0
        assert!(matches!(subs[0].expand(&[6]), Err(Error::Validation(_))));
        assert_eq!(all.unexpanded(), subs[0]);
    }
}
