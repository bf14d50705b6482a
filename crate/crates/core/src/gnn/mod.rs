//! Dense GNN layers, loss and optimiser with hand-written backward passes.

mod layers;
mod model;
mod optim;

pub use layers::{
    block_flops, graphconv_backward, graphconv_forward, sageconv_backward, sageconv_forward,
    LayerActivation,
};
pub use model::{
    cross_entropy_backward, forward_trace, model_forward, softmax_cross_entropy, ForwardTrace,
    GnnModel, Injections, LayerKind, LayerWeights, ModelGrads,
};
pub use optim::AdamState;
