//! Remote-node scores and the pruning operators built on them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Subgraph;

/// For each training vertex (local index), every node whose in-edge
/// distance from it is at most `layers`. Remote nodes have no in-edges in a
/// subgraph, so searches stop at them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodIndex {
    pub layers: usize,
    pub sets: BTreeMap<usize, Vec<usize>>,
}

impl NeighborhoodIndex {
    pub fn build(sg: &Subgraph, layers: usize) -> Self {
        let n = sg.num_nodes();
        let mut dist = vec![usize::MAX; n];
        let mut sets = BTreeMap::new();
        for t in sg.train_nodes() {
            let mut reached = vec![t];
            let mut queue = VecDeque::from([t]);
            dist[t] = 0;
            while let Some(u) = queue.pop_front() {
                if dist[u] == layers {
                    continue;
                }
                for &v in sg.in_neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        reached.push(v);
                        queue.push_back(v);
                    }
                }
            }
            for &v in &reached {
                dist[v] = usize::MAX;
            }
            reached.sort_unstable();
            sets.insert(t, reached);
        }
        NeighborhoodIndex { layers, sets }
    }
}

/// Score per pull candidate (global ID), each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: BTreeMap<usize, f64>,
    pub layers: usize,
    pub train_count: usize,
}

impl ScoreTable {
    pub fn get(&self, node: usize) -> Option<f64> {
        self.scores.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// IDs by descending score, ties by ascending ID.
    pub fn ranked(&self) -> Vec<usize> {
        let mut ids: Vec<(usize, f64)> = self.scores.iter().map(|(&k, &v)| (k, v)).collect();
        ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ids.into_iter().map(|(k, _)| k).collect()
    }

    /// Keeps only the entries for `nodes`.
    pub fn restricted_to(&self, nodes: &[usize]) -> ScoreTable {
        let keep: BTreeSet<usize> = nodes.iter().copied().collect();
        ScoreTable {
            scores: self.scores.iter().filter(|(k, _)| keep.contains(k)).map(|(&k, &v)| (k, v)).collect(),
            ..self.clone()
        }
    }

    /// Text dump, one `node_id score` line per candidate in ID order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (node, score) in &self.scores {
            writeln!(w, "{node} {score}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Remote in-neighbours each boundary vertex keeps; `None` keeps all.
    pub retention_limit: Option<usize>,
    pub score_fraction: f64,
    pub prefetch_fraction: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { retention_limit: Some(4), score_fraction: 0.25, prefetch_fraction: 0.25 }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("score fraction", self.score_fraction), ("prefetch fraction", self.prefetch_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Fraction of the client's training vertices whose `layers`-hop
/// in-neighbourhood contains each pull candidate. `sg` should be the fully
/// expanded subgraph; candidates it lacks score 0.
pub fn frequency_scores(sg: &Subgraph, layers: usize) -> ScoreTable {
    let index = NeighborhoodIndex::build(sg, layers);
    let train_count = index.sets.len();
    let mut counts: BTreeMap<usize, usize> = sg.pull_candidates().iter().map(|&c| (c, 0)).collect();
    for set in index.sets.values() {
        for &v in set {
            if !sg.is_local(v) {
                if let Some(c) = counts.get_mut(&sg.global_id(v)) {
                    *c += 1;
                }
            }
        }
    }
    if train_count == 0 && !counts.is_empty() {
        log::warn!("client {} has no training vertices; all scores are zero", sg.client_id());
    }
    let scores = counts
        .into_iter()
        .map(|(k, c)| (k, if train_count == 0 { 0.0 } else { c as f64 / train_count as f64 }))
        .collect();
    ScoreTable { scores, layers, train_count }
}

/// In+out degree of each pull candidate over the client's local edges plus
/// every candidate cross-client edge, divided by the largest such degree.
pub fn degree_scores(sg: &Subgraph) -> ScoreTable {
    let mut degree: BTreeMap<usize, usize> = sg.pull_candidates().iter().map(|&c| (c, 0)).collect();
    for &(s, d) in sg.local_edges().iter().chain(sg.candidate_edges()) {
        if let Some(x) = degree.get_mut(&s) {
            *x += 1;
        }
        if let Some(x) = degree.get_mut(&d) {
            *x += 1;
        }
    }
    let max = degree.values().copied().max().unwrap_or(0);
    let scores = degree
        .into_iter()
        .map(|(k, d)| (k, if max == 0 { 0.0 } else { d as f64 / max as f64 }))
        .collect();
    ScoreTable { scores, layers: 0, train_count: sg.num_train() }
}

/// Each local boundary vertex keeps a uniformly random `min(limit, count)`
/// of its remote in-neighbours; a remote node survives if anyone keeps it.
///
/// Every boundary vertex's candidate list is shuffled whatever the limit,
/// so for one seed the retained sets are nested in `limit`.
pub fn prune_retention<R: Rng + ?Sized>(sg: &Subgraph, limit: Option<usize>, rng: &mut R) -> Result<Subgraph> {
    let mut by_dst: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(s, d) in sg.candidate_edges() {
        by_dst.entry(d).or_default().push(s);
    }
    let mut kept = Vec::new();
    for (d, mut sources) in by_dst {
        sources.sort_unstable();
        sources.shuffle(rng);
        let take = limit.map_or(sources.len(), |p| p.min(sources.len()));
        kept.extend(sources[..take].iter().map(|&s| (s, d)));
    }
    sg.with_remote_edges(kept)
}

/// `ceil(fraction * n)`, guarded against float noise such as `0.29 * 100`.
pub fn top_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Keeps the `ceil(f * N)` best-scoring pull candidates with all their edges.
pub fn prune_top_f(sg: &Subgraph, scores: &ScoreTable, f: f64) -> Result<Subgraph> {
    if let Some(missing) = sg.pull_candidates().iter().find(|c| !scores.scores.contains_key(c)) {
        return Err(Error::Validation(format!("pull candidate {missing} has no score")));
    }
    let table = scores.restricted_to(sg.pull_candidates());
    let mut keep = select_prefetch(&table, f);
    keep.sort_unstable();
    sg.expand(&keep)
}

/// The `ceil(x * N)` best-scoring IDs, ties by ascending ID.
pub fn select_prefetch(scores: &ScoreTable, x: f64) -> Vec<usize> {
    let ranked = scores.ranked();
    let k = top_count(x, ranked.len());
    ranked[..k].to_vec()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::tests::eight_node_graph;
    use crate::graph::{build_subgraphs, Graph, PartitionAssignment};
    use crate::linalg::Matrix;

    fn client(edges: Vec<(usize, usize)>, parts: Vec<usize>, train: Vec<usize>, c: usize) -> Subgraph {
        let n = parts.len();
        let k = parts.iter().max().unwrap() + 1;
        let g = Graph::new(n, edges, Matrix::zeros(n, 1), vec![0; n], train, vec![]).unwrap();
        let a = PartitionAssignment::new(parts, k).unwrap();
        build_subgraphs(&g, &a).unwrap().remove(c)
    }

    #[test]
    fn direct_neighbor_scores_one() {
        let sg = client(vec![(1, 0)], vec![0, 1], vec![0], 0);
        let full = sg.expand(sg.pull_candidates()).unwrap();
        let s = frequency_scores(&full, 1);
        assert_eq!(s.get(1), Some(1.0));
    }

    #[test]
    fn unreachable_scores_zero() {
        // 3 -> 2 -> 1 -> 0 with 3 remote; two hops from 0 never reach it
        let sg = client(vec![(3, 2), (2, 1), (1, 0)], vec![0, 0, 0, 1], vec![0], 0);
        let full = sg.expand(sg.pull_candidates()).unwrap();
        assert_eq!(frequency_scores(&full, 2).get(3), Some(0.0));
        assert_eq!(frequency_scores(&full, 3).get(3), Some(1.0));
    }

    #[test]
    fn no_training_vertices() {
        let sg = client(vec![(1, 0)], vec![0, 1], vec![], 0);
        let full = sg.expand(sg.pull_candidates()).unwrap();
        let s = frequency_scores(&full, 2);
        assert_eq!(s.train_count, 0);
        assert_eq!(s.get(1), Some(0.0));
    }

    #[test]
    fn degree_normalized() {
        // remote 3 -> {0, 1}, remote 4 -> 0, and 0 -> 4 counts for 4 too
        let sg = client(vec![(3, 0), (3, 1), (4, 0), (0, 4), (0, 1)], vec![0, 0, 1, 1, 1], vec![0], 0);
        let s = degree_scores(&sg);
        assert_eq!(s.get(3), Some(1.0));
        assert_eq!(s.get(4), Some(0.5));
    }

    fn fan_in(remotes: usize) -> Subgraph {
        // remote nodes 1..=remotes all point at local node 0
        let edges = (1..=remotes).map(|r| (r, 0)).collect();
        let mut parts = vec![1; remotes + 1];
        parts[0] = 0;
        client(edges, parts, vec![0], 0)
    }

    #[test]
    fn retention_limits() {
        let sg = fan_in(7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(prune_retention(&sg, Some(0), &mut rng).unwrap().remote_nodes().is_empty());
        let all = prune_retention(&sg, None, &mut rng).unwrap();
        assert_eq!(all, sg.expand(sg.pull_candidates()).unwrap());
        let four = prune_retention(&sg, Some(4), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(four.remote_nodes().len(), 4);
        let again = prune_retention(&sg, Some(4), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(four, again);
    }

    #[test]
    fn retention_nested() {
        let (g, a) = eight_node_graph();
        for sg in build_subgraphs(&g, &a).unwrap() {
            let mut prev: BTreeSet<(usize, usize)> = BTreeSet::new();
            for p in [Some(0), Some(1), Some(2), None] {
                let pruned = prune_retention(&sg, p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
                let cur: BTreeSet<_> = pruned.remote_edges().iter().copied().collect();
                assert!(prev.is_subset(&cur));
                prev = cur;
            }
        }
    }

    #[test]
    fn top_f_sort_oracle() {
        let sg = fan_in(100);
        let scores = ScoreTable {
            scores: (1..=100).map(|v| (v, ((v * 37) % 11) as f64 / 10.0)).collect(),
            layers: 2,
            train_count: 1,
        };
        let pruned = prune_top_f(&sg, &scores, 0.25).unwrap();
        assert_eq!(pruned.remote_nodes().len(), 25);
        let kept: BTreeSet<usize> = pruned.remote_nodes().iter().copied().collect();
        let min_kept = kept.iter().map(|&v| scores.scores[&v]).fold(f64::INFINITY, f64::min);
        let max_dropped = (1..=100)
            .filter(|v| !kept.contains(v))
            .map(|v| scores.scores[&v])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_kept >= max_dropped);

        assert!(prune_top_f(&sg, &scores, 0.0).unwrap().remote_nodes().is_empty());
        assert_eq!(prune_top_f(&sg, &scores, 1.0).unwrap().remote_nodes().len(), 100);
        let mut pre = select_prefetch(&scores, 0.25);
        pre.sort_unstable();
        assert_eq!(pre, pruned.remote_nodes());
        assert!(select_prefetch(&scores, 0.0).is_empty());
        assert_eq!(select_prefetch(&scores, 1.0).len(), 100);
    }

    #[test]
    fn top_count_guard() {
        assert_eq!(top_count(0.29, 100), 29);
        assert_eq!(top_count(0.25, 10), 3);
        assert_eq!(top_count(1.0, 7), 7);
        assert_eq!(top_count(0.0, 7), 0);
    }

    #[test]
    fn dump_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.txt");
        let t = ScoreTable { scores: BTreeMap::from([(3, 0.5), (1, 1.0)]), layers: 2, train_count: 2 };
        t.write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "1 1\n3 0.5\n");
    }
}
