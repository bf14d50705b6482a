use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    block_flops, graphconv_backward, graphconv_forward, sageconv_backward, sageconv_forward,
    LayerActivation,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::{ComputationGraph, SampledBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    GraphConv,
    SageConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerWeights {
    GraphConv { weight: Matrix },
    Sage { w_self: Matrix, w_neigh: Matrix },
}

impl LayerWeights {
    fn params(&self) -> Vec<&Matrix> {
        match self {
            LayerWeights::GraphConv { weight } => vec![weight],
            LayerWeights::Sage { w_self, w_neigh } => vec![w_self, w_neigh],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            LayerWeights::GraphConv { weight } => vec![weight],
            LayerWeights::Sage { w_self, w_neigh } => vec![w_self, w_neigh],
        }
    }

    fn in_dim(&self) -> usize {
        self.params()[0].rows()
    }

    fn out_dim(&self) -> usize {
        self.params()[0].cols()
    }
}

/// An L-layer GNN. Layers `1..L-1` use ReLU, the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    kind: LayerKind,
    hidden_dim: usize,
    layers: Vec<LayerWeights>,
}

impl GnnModel {
    /// Glorot-uniform initialisation.
    pub fn new<R: Rng + ?Sized>(
        kind: LayerKind,
        num_layers: usize,
        in_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let rows = if l == 0 { in_dim } else { hidden_dim };
            let cols = if l + 1 == num_layers { num_classes } else { hidden_dim };
            layers.push(match kind {
                LayerKind::GraphConv => LayerWeights::GraphConv { weight: Matrix::glorot(rows, cols, rng) },
                LayerKind::SageConv => LayerWeights::Sage {
                    w_self: Matrix::glorot(rows, cols, rng),
                    w_neigh: Matrix::glorot(rows, cols, rng),
                },
            });
        }
        Ok(GnnModel { kind, hidden_dim, layers })
    }

    pub fn from_layers(kind: LayerKind, layers: Vec<LayerWeights>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, w) in layers.iter().enumerate() {
            let ok = matches!(
                (kind, w),
                (LayerKind::GraphConv, LayerWeights::GraphConv { .. }) | (LayerKind::SageConv, LayerWeights::Sage { .. })
            );
            if !ok {
                return Err(Error::Config(format!("layer {} does not match {kind:?}", i + 1)));
            }
            if let LayerWeights::Sage { w_self, w_neigh } = w {
                if w_self.shape() != w_neigh.shape() {
                    return Err(Error::Shape(format!("layer {} sage weights differ in shape", i + 1)));
                }
            }
            if i > 0 && layers[i - 1].out_dim() != w.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} expects width {}, previous layer produces {}",
                    i + 1,
                    w.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
        }
        let hidden_dim = if layers.len() > 1 { layers[0].out_dim() } else { 0 };
        Ok(GnnModel { kind, hidden_dim, layers })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn layer(&self, l: usize) -> &LayerWeights {
        &self.layers[l - 1]
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, LayerWeights::out_dim)
    }

    /// Output width of layer `l` (1-based), i.e. the width of `h^l`.
    pub fn layer_width(&self, l: usize) -> usize {
        self.layers[l - 1].out_dim()
    }

    /// All weight matrices, layer by layer.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(LayerWeights::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(LayerWeights::params_mut).collect()
    }

    pub fn same_shape(&self, other: &GnnModel) -> bool {
        self.kind == other.kind
            && self.layers.len() == other.layers.len()
            && self.params().iter().zip(other.params()).all(|(a, b)| a.shape() == b.shape())
    }

    fn is_hidden(&self, l: usize) -> bool {
        l < self.layers.len()
    }

    fn layer_forward(&self, block: &SampledBlock, h_in: &Matrix) -> Result<LayerActivation> {
        let l = block.layer;
        if l == 0 || l > self.layers.len() {
            return Err(Error::Shape(format!("block for layer {l} on a {}-layer model", self.layers.len())));
        }
        let relu = self.is_hidden(l);
        match &self.layers[l - 1] {
            LayerWeights::GraphConv { weight } => graphconv_forward(block, h_in, weight, relu),
            LayerWeights::Sage { w_self, w_neigh } => sageconv_forward(block, h_in, w_self, w_neigh, relu),
        }
    }

    /// Estimated multiply-adds of a forward pass over `cg`.
    pub fn forward_flops(&self, cg: &ComputationGraph) -> u64 {
        cg.blocks
            .iter()
            .map(|b| {
                let w = &self.layers[b.layer - 1];
                block_flops(b, w.in_dim(), w.out_dim(), self.kind == LayerKind::SageConv)
            })
            .sum()
    }
}

/// Cached remote embeddings keyed by `(embedding layer, block node index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Injections {
    rows: HashMap<(usize, usize), Vec<f64>>,
}

impl Injections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, node: usize, row: Vec<f64>) {
        self.rows.insert((layer, node), row);
    }

    pub fn get(&self, layer: usize, node: usize) -> Option<&[f64]> {
        self.rows.get(&(layer, node)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Inputs and activations of every block, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub inputs: Vec<Matrix>,
    pub activations: Vec<LayerActivation>,
}

impl ForwardTrace {
    /// Output of the top block (one row per seed).
    pub fn output(&self) -> &Matrix {
        &self.activations.last().expect("non-empty trace").combined
    }

    /// `h^l` rows of the first `n` outputs for each block, deepest first.
    pub fn seed_embeddings(&self, n: usize) -> Vec<Matrix> {
        self.activations.iter().map(|a| a.combined.head_rows(n)).collect()
    }
}

/// Runs every block of `cg` in order. `inputs` holds `h^0` for the deepest
/// block's input nodes. Remote rows of higher blocks come from `injections`.
pub fn forward_trace(
    model: &GnnModel,
    cg: &ComputationGraph,
    inputs: &Matrix,
    injections: &Injections,
) -> Result<ForwardTrace> {
    if cg.blocks.is_empty() {
        return Err(Error::Validation("empty computation graph".into()));
    }
    let mut missing = Vec::new();
    for block in &cg.blocks {
        if block.num_remote > 0 && block.layer < 2 {
            return Err(Error::Validation(format!(
                "remote nodes at the input of layer {} need features",
                block.layer
            )));
        }
        for &n in block.remote_nodes() {
            if injections.get(block.layer - 1, n).is_none() {
                missing.push((n, block.layer - 1));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::CacheMiss { missing });
    }

    let mut trace = ForwardTrace { inputs: Vec::with_capacity(cg.depth()), activations: Vec::with_capacity(cg.depth()) };
    let mut h = inputs.clone();
    for (b, block) in cg.blocks.iter().enumerate() {
        if b > 0 {
            let prev = &trace.activations[b - 1].combined;
            if prev.rows() != block.num_local_inputs() {
                return Err(Error::Shape(format!(
                    "layer {} has {} local inputs but the layer below produced {} rows",
                    block.layer,
                    block.num_local_inputs(),
                    prev.rows()
                )));
            }
            let mut next = Matrix::zeros(block.num_inputs(), prev.cols());
            next.data_mut()[..prev.data().len()].copy_from_slice(prev.data());
            for (i, &n) in block.remote_nodes().iter().enumerate() {
                let row = injections.get(block.layer - 1, n).expect("checked above");
                if row.len() != prev.cols() {
                    return Err(Error::Shape(format!(
                        "injected embedding for node {n} has width {}, expected {}",
                        row.len(),
                        prev.cols()
                    )));
                }
                next.row_mut(block.num_local_inputs() + i).copy_from_slice(row);
            }
            h = next;
        }
        let act = model.layer_forward(block, &h)?;
        trace.inputs.push(std::mem::replace(&mut h, Matrix::zeros(0, 0)));
        trace.activations.push(act);
    }
    Ok(trace)
}

/// Logits for the seed nodes.
pub fn model_forward(
    model: &GnnModel,
    cg: &ComputationGraph,
    inputs: &Matrix,
    injections: &Injections,
) -> Result<Matrix> {
    if cg.depth() != model.num_layers() {
        return Err(Error::Shape(format!(
            "computation graph depth {} for a {}-layer model",
            cg.depth(),
            model.num_layers()
        )));
    }
    Ok(forward_trace(model, cg, inputs, injections)?.output().clone())
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no labelled seeds".into()));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(Error::Validation(format!("label {bad} outside 0..{c}")));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), c);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - row[y as usize];
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - log_sum).exp() / n;
        }
        g[y as usize] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Gradients in the order of [`GnnModel::params`].
pub type ModelGrads = Vec<Matrix>;

/// Loss over the seeds of `cg` and exact gradients for every weight matrix.
/// Injected remote embeddings are constants: no gradient flows into them.
pub fn cross_entropy_backward(
    model: &GnnModel,
    cg: &ComputationGraph,
    inputs: &Matrix,
    injections: &Injections,
    labels: &[u32],
) -> Result<(f64, ModelGrads)> {
    if cg.depth() != model.num_layers() {
        return Err(Error::Shape(format!(
            "computation graph depth {} for a {}-layer model",
            cg.depth(),
            model.num_layers()
        )));
    }
    let trace = forward_trace(model, cg, inputs, injections)?;
    let (loss, mut d_out) = softmax_cross_entropy(trace.output(), labels)?;

    let mut per_layer: Vec<Vec<Matrix>> = vec![Vec::new(); model.num_layers()];
    for b in (0..cg.depth()).rev() {
        let block = &cg.blocks[b];
        let l = block.layer;
        let relu = model.is_hidden(l);
        let act = &trace.activations[b];
        let d_in = match &model.layers[l - 1] {
            LayerWeights::GraphConv { weight } => {
                let (dw, d_in) = graphconv_backward(block, act, weight, &d_out, relu)?;
                per_layer[l - 1] = vec![dw];
                d_in
            }
            LayerWeights::Sage { w_self, w_neigh } => {
                let (dws, dwn, d_in) =
                    sageconv_backward(block, &trace.inputs[b], act, w_self, w_neigh, &d_out, relu)?;
                per_layer[l - 1] = vec![dws, dwn];
                d_in
            }
        };
        if b > 0 {
            // remote rows are dropped here
            d_out = d_in.head_rows(block.num_local_inputs());
        }
    }
    let grads: ModelGrads = per_layer.into_iter().flatten().collect();
    for g in &grads {
        g.ensure_finite("gradient")?;
    }
    Ok((loss, grads))
}
