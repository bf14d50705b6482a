//! GraphConv and SAGEConv over sampled blocks, forward and backward.
//!
//! Aggregation always walks edges grouped by output node and sorted by input
//! position, so the result does not depend on the order edges were sampled in.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::SampledBlock;

/// Post-aggregation and post-activation rows of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub aggregated: Matrix,
    pub combined: Matrix,
}

/// In-edges of every output node, sorted by input position.
pub(crate) struct BlockAdjacency {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl BlockAdjacency {
    pub(crate) fn new(block: &SampledBlock) -> Self {
        let mut sorted: Vec<(usize, usize)> = block.edges.iter().map(|&(s, d)| (d, s)).collect();
        sorted.sort_unstable();
        let mut offsets = vec![0usize; block.num_outputs + 1];
        for &(d, _) in &sorted {
            offsets[d + 1] += 1;
        }
        for i in 0..block.num_outputs {
            offsets[i + 1] += offsets[i];
        }
        BlockAdjacency { offsets, sources: sorted.into_iter().map(|(_, s)| s).collect() }
    }

    #[inline]
    pub(crate) fn sources(&self, out: usize) -> &[usize] {
        &self.sources[self.offsets[out]..self.offsets[out + 1]]
    }

    #[inline]
    fn in_degree(&self, out: usize) -> usize {
        self.offsets[out + 1] - self.offsets[out]
    }
}

fn check_block(block: &SampledBlock, h_in: &Matrix, in_dim: usize) -> Result<()> {
    block.validate()?;
    if h_in.rows() != block.num_inputs() {
        return Err(Error::Shape(format!(
            "layer {}: {} input rows for {} block inputs",
            block.layer,
            h_in.rows(),
            block.num_inputs()
        )));
    }
    if h_in.cols() != in_dim {
        return Err(Error::Shape(format!(
            "layer {}: input width {} but weights expect {in_dim}",
            block.layer,
            h_in.cols()
        )));
    }
    h_in.ensure_finite("layer input")
}

/// `1 / sqrt(d + 1)` per output, `d` being the in-degree inside the block.
fn graphconv_norms(block: &SampledBlock, adj: &BlockAdjacency) -> Vec<f64> {
    (0..block.num_outputs).map(|i| 1.0 / ((adj.in_degree(i) + 1) as f64).sqrt()).collect()
}

/// Edge weight `v -> u`. An input that is not an output has no in-edges in
/// the block, so its degree is taken to be the destination's.
#[inline]
fn edge_weight(norms: &[f64], u: usize, v: usize) -> f64 {
    norms[u] * norms.get(v).copied().unwrap_or(norms[u])
}

fn graphconv_aggregate(block: &SampledBlock, adj: &BlockAdjacency, h_in: &Matrix) -> Matrix {
    let norms = graphconv_norms(block, adj);
    let mut agg = Matrix::zeros(block.num_outputs, h_in.cols());
    for u in 0..block.num_outputs {
        let nu = norms[u];
        let row = agg.row_mut(u);
        let self_w = nu * nu;
        for (o, &x) in row.iter_mut().zip(h_in.row(u)) {
            *o = self_w * x;
        }
        for &v in adj.sources(u) {
            let w = edge_weight(&norms, u, v);
            for (o, &x) in row.iter_mut().zip(h_in.row(v)) {
                *o += w * x;
            }
        }
    }
    agg
}

/// Symmetric-normalised convolution with self-loops:
/// `x_u = Σ_{v ∈ N(u) ∪ {u}} h_v / sqrt((d_u + 1)(d_v + 1))`, `h_u = σ(x_u W)`.
/// Degrees are counted inside the block; see [`edge_weight`] for inputs
/// without in-edges.
pub fn graphconv_forward(
    block: &SampledBlock,
    h_in: &Matrix,
    weight: &Matrix,
    relu: bool,
) -> Result<LayerActivation> {
    check_block(block, h_in, weight.rows())?;
    let adj = BlockAdjacency::new(block);
    let aggregated = graphconv_aggregate(block, &adj, h_in);
    let mut combined = aggregated.matmul(weight)?;
    if relu {
        combined = combined.relu();
    }
    combined.ensure_finite("graphconv output")?;
    Ok(LayerActivation { aggregated, combined })
}

/// Returns `(dW, dH_in)`.
pub fn graphconv_backward(
    block: &SampledBlock,
    act: &LayerActivation,
    weight: &Matrix,
    d_combined: &Matrix,
    relu: bool,
) -> Result<(Matrix, Matrix)> {
    let d_pre = relu_backward(d_combined, &act.combined, relu);
    let d_weight = act.aggregated.t_matmul(&d_pre)?;
    let d_agg = d_pre.matmul_t(weight)?;

    let adj = BlockAdjacency::new(block);
    let norms = graphconv_norms(block, &adj);
    let mut d_in = Matrix::zeros(block.num_inputs(), weight.rows());
    for u in 0..block.num_outputs {
        let nu = norms[u];
        let g = d_agg.row(u).to_vec();
        let self_w = nu * nu;
        for (o, &x) in d_in.row_mut(u).iter_mut().zip(&g) {
            *o += self_w * x;
        }
        for &v in adj.sources(u) {
            let w = edge_weight(&norms, u, v);
            for (o, &x) in d_in.row_mut(v).iter_mut().zip(&g) {
                *o += w * x;
            }
        }
    }
    Ok((d_weight, d_in))
}

fn mean_aggregate(block: &SampledBlock, adj: &BlockAdjacency, h_in: &Matrix) -> Matrix {
    let mut agg = Matrix::zeros(block.num_outputs, h_in.cols());
    for u in 0..block.num_outputs {
        let srcs = adj.sources(u);
        if srcs.is_empty() {
            continue;
        }
        let inv = 1.0 / srcs.len() as f64;
        let row = agg.row_mut(u);
        for &v in srcs {
            for (o, &x) in row.iter_mut().zip(h_in.row(v)) {
                *o += x;
            }
        }
        for o in row.iter_mut() {
            *o *= inv;
        }
    }
    agg
}

/// GraphSAGE with the mean aggregator: `h_u = σ(h_u W_self + mean_{v ∈ N(u)} h_v W_neigh)`.
pub fn sageconv_forward(
    block: &SampledBlock,
    h_in: &Matrix,
    w_self: &Matrix,
    w_neigh: &Matrix,
    relu: bool,
) -> Result<LayerActivation> {
    check_block(block, h_in, w_self.rows())?;
    if w_self.shape() != w_neigh.shape() {
        return Err(Error::Shape(format!(
            "sage weights {:?} vs {:?}",
            w_self.shape(),
            w_neigh.shape()
        )));
    }
    let adj = BlockAdjacency::new(block);
    let aggregated = mean_aggregate(block, &adj, h_in);
    let mut combined = h_in.head_rows(block.num_outputs).matmul(w_self)?;
    combined.add_assign(&aggregated.matmul(w_neigh)?)?;
    if relu {
        combined = combined.relu();
    }
    combined.ensure_finite("sageconv output")?;
    Ok(LayerActivation { aggregated, combined })
}

/// Returns `(dW_self, dW_neigh, dH_in)`.
pub fn sageconv_backward(
    block: &SampledBlock,
    h_in: &Matrix,
    act: &LayerActivation,
    w_self: &Matrix,
    w_neigh: &Matrix,
    d_combined: &Matrix,
    relu: bool,
) -> Result<(Matrix, Matrix, Matrix)> {
    let d_pre = relu_backward(d_combined, &act.combined, relu);
    let d_self_w = h_in.head_rows(block.num_outputs).t_matmul(&d_pre)?;
    let d_neigh_w = act.aggregated.t_matmul(&d_pre)?;
    let d_self = d_pre.matmul_t(w_self)?;
    let d_mean = d_pre.matmul_t(w_neigh)?;

    let adj = BlockAdjacency::new(block);
    let mut d_in = Matrix::zeros(block.num_inputs(), w_self.rows());
    for u in 0..block.num_outputs {
        for (o, &x) in d_in.row_mut(u).iter_mut().zip(d_self.row(u)) {
            *o += x;
        }
        let srcs = adj.sources(u);
        if srcs.is_empty() {
            continue;
        }
        let inv = 1.0 / srcs.len() as f64;
        let g = d_mean.row(u).to_vec();
        for &v in srcs {
            for (o, &x) in d_in.row_mut(v).iter_mut().zip(&g) {
                *o += inv * x;
            }
        }
    }
    Ok((d_self_w, d_neigh_w, d_in))
}

fn relu_backward(d_out: &Matrix, out: &Matrix, relu: bool) -> Matrix {
    if !relu {
        return d_out.clone();
    }
    let mut d = d_out.clone();
    for (g, &o) in d.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

/// Multiply-add count of one forward pass through a block.
pub fn block_flops(block: &SampledBlock, in_dim: usize, out_dim: usize, sage: bool) -> u64 {
    let agg = (block.edges.len() + block.num_outputs) as u64 * in_dim as u64;
    let dense = block.num_outputs as u64 * in_dim as u64 * out_dim as u64;
    if sage {
        agg + 2 * dense
    } else {
        agg + dense
    }
}
