//! Federated subgraph GNN training with a shared embedding server.
//!
//! Each client trains on its own partition of a graph. Embeddings of nodes
//! that sit on partition boundaries are exchanged through an in-memory
//! key-value server so that cross-client edges still carry information.
//! Seven training strategies are supported, from plain federated training
//! (no exchange) to pruned, prefetched and overlapped exchange.

pub mod client;
pub mod config;
pub mod embed;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod orchestrator;
pub mod partition;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod scoring;
pub mod synth;
pub mod timing;

pub use error::{Error, Result};
pub use gnn::{GnnModel, LayerKind};
pub use graph::{Graph, PartitionAssignment, Subgraph};
pub use linalg::Matrix;
pub use config::{Strategy, TrainConfig};
pub use orchestrator::{run_session, RoundRecord, SessionOutput};
pub use timing::ClockKind;
pub use sampler::{ComputationGraph, SampledBlock};
