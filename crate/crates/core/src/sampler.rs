//! Layered minibatch computation graphs with fixed fanout.
//!
//! Blocks are built top-down from the seeds and stored deepest first. Every
//! block lists its input nodes as `[outputs..., new local nodes..., remote
//! nodes...]`; the local prefix of a block's inputs is exactly the output set
//! of the block below it, while the remote tail is filled from cached
//! embeddings at forward time. Remote nodes are never expanded, and the
//! deepest block never contains them because their features are unavailable.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Subgraph;

/// One GNN layer's bipartite message-passing structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledBlock {
    /// Model layer this block feeds, 1-based (1 = deepest).
    pub layer: usize,
    /// Subgraph-local node indices. Outputs form the prefix and remote nodes the tail.
    pub input_nodes: Vec<usize>,
    pub num_outputs: usize,
    pub num_remote: usize,
    /// `(input position, output position)` pairs.
    pub edges: Vec<(usize, usize)>,
}

impl SampledBlock {
    /// Block over a whole graph: every node is both input and output.
    pub fn full(num_nodes: usize, edges: &[(usize, usize)], layer: usize) -> Self {
        SampledBlock {
            layer,
            input_nodes: (0..num_nodes).collect(),
            num_outputs: num_nodes,
            num_remote: 0,
            edges: edges.to_vec(),
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.input_nodes.len()
    }

    pub fn num_local_inputs(&self) -> usize {
        self.input_nodes.len() - self.num_remote
    }

    pub fn output_nodes(&self) -> &[usize] {
        &self.input_nodes[..self.num_outputs]
    }

    pub fn remote_nodes(&self) -> &[usize] {
        &self.input_nodes[self.num_local_inputs()..]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_outputs + self.num_remote > self.input_nodes.len() {
            return Err(Error::Validation(format!(
                "block for layer {}: {} outputs + {} remote exceed {} inputs",
                self.layer,
                self.num_outputs,
                self.num_remote,
                self.input_nodes.len()
            )));
        }
        for &(src, dst) in &self.edges {
            if src >= self.input_nodes.len() || dst >= self.num_outputs {
                return Err(Error::Validation(format!(
                    "block for layer {}: edge ({src}, {dst}) out of range",
                    self.layer
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputationGraph {
    /// Deepest block first.
    pub blocks: Vec<SampledBlock>,
    /// Subgraph-local seed indices (deduplicated); the outputs of the top block.
    pub seeds: Vec<usize>,
    /// `remote_at_hop[h - 1]` holds the remote nodes reached at hop `h`.
    pub remote_at_hop: Vec<Vec<usize>>,
}

impl ComputationGraph {
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Every `(node, embedding layer)` pair that has to come from the cache.
    pub fn remote_requirements(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for &n in block.remote_nodes() {
                out.push((n, block.layer - 1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fanout {
    Limited(usize),
    Full,
}

impl Fanout {
    fn take(self, available: usize) -> usize {
        match self {
            Fanout::Limited(f) => f.min(available),
            Fanout::Full => available,
        }
    }
}

/// Which remote in-neighbours a traversal may pull in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemotePolicy {
    /// Remote nodes allowed at every hop except the deepest one.
    Truncate,
    /// Never touch remote nodes (the unexpanded local subgraph).
    LocalOnly,
}

/// Samples a training computation graph of depth `layers` for `seeds`.
///
/// Seeds must be local training vertices of `subgraph`.
pub fn sample_computation_graph<R: Rng + ?Sized>(
    subgraph: &Subgraph,
    seeds: &[usize],
    fanout: usize,
    layers: usize,
    rng: &mut R,
) -> Result<ComputationGraph> {
    if fanout == 0 {
        return Err(Error::Config("fanout must be at least 1".into()));
    }
    for &s in seeds {
        if !subgraph.is_local(s) {
            return Err(Error::Validation(format!("seed {s} is a remote node")));
        }
        if !subgraph.is_train(s) {
            return Err(Error::Validation(format!("seed {s} is not a training vertex")));
        }
    }
    build(subgraph, seeds, Fanout::Limited(fanout), layers, &truncate, rng)
}

fn truncate(_node: usize, emb_layer: usize) -> bool {
    emb_layer >= 1
}

/// Computation graph over complete in-neighbourhoods; no randomness involved.
/// Seeds only need to be local.
pub fn full_computation_graph(
    subgraph: &Subgraph,
    seeds: &[usize],
    layers: usize,
    policy: RemotePolicy,
) -> Result<ComputationGraph> {
    match policy {
        RemotePolicy::Truncate => full_computation_graph_with(subgraph, seeds, layers, truncate),
        RemotePolicy::LocalOnly => full_computation_graph_with(subgraph, seeds, layers, |_, _| false),
    }
}

/// Like [`full_computation_graph`], admitting a remote node `v` into a block
/// only when `allow(v, l)` holds, `l` being the embedding layer that block
/// reads (its own layer minus one). Layer 0 is never admitted.
pub fn full_computation_graph_with(
    subgraph: &Subgraph,
    seeds: &[usize],
    layers: usize,
    allow: impl Fn(usize, usize) -> bool,
) -> Result<ComputationGraph> {
    // Full fanout never consults the RNG.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    computation_graph_with(subgraph, seeds, Fanout::Full, layers, allow, &mut rng)
}

/// General form: any local seeds, any fanout, remote admission by `allow`
/// (local subgraph index, embedding layer). Layer 0 is never admitted.
pub fn computation_graph_with<R: Rng + ?Sized>(
    subgraph: &Subgraph,
    seeds: &[usize],
    fanout: Fanout,
    layers: usize,
    allow: impl Fn(usize, usize) -> bool,
    rng: &mut R,
) -> Result<ComputationGraph> {
    if fanout == Fanout::Limited(0) {
        return Err(Error::Config("fanout must be at least 1".into()));
    }
    for &s in seeds {
        if !subgraph.is_local(s) {
            return Err(Error::Validation(format!("seed {s} is a remote node")));
        }
    }
    let allow = |v: usize, l: usize| l >= 1 && allow(v, l);
    build(subgraph, seeds, fanout, layers, &allow, rng)
}

fn build<R: Rng + ?Sized>(
    subgraph: &Subgraph,
    seeds: &[usize],
    fanout: Fanout,
    layers: usize,
    allow_remote: &dyn Fn(usize, usize) -> bool,
    rng: &mut R,
) -> Result<ComputationGraph> {
    if layers == 0 {
        return Err(Error::Config("a computation graph needs at least one layer".into()));
    }
    let mut frontier: Vec<usize> = Vec::with_capacity(seeds.len());
    {
        let mut seen = HashMap::new();
        for &s in seeds {
            if seen.insert(s, ()).is_none() {
                frontier.push(s);
            }
        }
    }

    let mut top_down = Vec::with_capacity(layers);
    let mut remote_at_hop = Vec::with_capacity(layers);
    let mut candidates: Vec<usize> = Vec::new();

    for hop in 1..=layers {
        let emb_layer = layers - hop;
        let mut position: HashMap<usize, usize> = HashMap::with_capacity(frontier.len() * 2);
        for (i, &n) in frontier.iter().enumerate() {
            position.insert(n, i);
        }
        let mut new_local: Vec<usize> = Vec::new();
        let mut remote: Vec<usize> = Vec::new();
        let mut remote_pos: HashMap<usize, usize> = HashMap::new();
        // edges as (node id, output position), resolved to input positions below
        let mut raw_edges: Vec<(usize, usize)> = Vec::new();

        for (dst_pos, &dst) in frontier.iter().enumerate() {
            candidates.clear();
            for &src in subgraph.in_neighbors(dst) {
                let remote_src = !subgraph.is_local(src);
                let allowed = !remote_src || allow_remote(src, emb_layer);
                if allowed {
                    candidates.push(src);
                }
            }
            let k = fanout.take(candidates.len());
            let picked: Vec<usize> = if k == candidates.len() {
                candidates.clone()
            } else {
                candidates.choose_multiple(rng, k).copied().collect()
            };
            for src in picked {
                if subgraph.is_local(src) {
                    let next = frontier.len() + new_local.len();
                    if let Entry::Vacant(e) = position.entry(src) {
                        e.insert(next);
                        new_local.push(src);
                    }
                } else if let Entry::Vacant(e) = remote_pos.entry(src) {
                    e.insert(remote.len());
                    remote.push(src);
                }
                raw_edges.push((src, dst_pos));
            }
        }

        let num_outputs = frontier.len();
        let num_local = num_outputs + new_local.len();
        let edges = raw_edges
            .into_iter()
            .map(|(src, dst_pos)| {
                let src_pos = match position.get(&src) {
                    Some(&p) => p,
                    None => num_local + remote_pos[&src],
                };
                (src_pos, dst_pos)
            })
            .collect();

        let mut input_nodes = frontier.clone();
        input_nodes.extend_from_slice(&new_local);
        input_nodes.extend_from_slice(&remote);

        top_down.push(SampledBlock {
            layer: layers - hop + 1,
            input_nodes,
            num_outputs,
            num_remote: remote.len(),
            edges,
        });
        remote_at_hop.push(remote);

        frontier.extend(new_local);
    }

    top_down.reverse();
    let seeds = top_down.last().map(|b| b.output_nodes().to_vec()).unwrap_or_default();
    Ok(ComputationGraph { blocks: top_down, seeds, remote_at_hop })
}

/// Shuffled, chunked passes over the training vertices.
pub fn minibatch_iter<R: Rng + ?Sized>(
    train_nodes: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order = train_nodes.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
