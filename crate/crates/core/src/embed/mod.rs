//! The embedding server, its wire protocol and client transports.

mod server;
mod store;
mod transport;
pub mod wire;

pub use server::{EmbeddingServer, ServerStats, TcpServerHandle};
pub use store::EmbeddingStore;
pub use transport::{EmbeddingClient, Fetched, InProcTransport, TcpTransport, Transport};
