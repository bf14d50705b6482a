use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use super::store::EmbeddingStore;
use super::wire::{err_code, read_frame, write_frame, Request, Response};
use crate::error::{Error, Result};

/// Snapshot of server contents and request counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    /// Embeddings stored for layers `1..L`.
    pub per_layer: Vec<u64>,
    pub bytes: u64,
    pub requests: u64,
    pub set_requests: u64,
    pub get_requests: u64,
    pub ids_written: u64,
    pub ids_read: u64,
    pub registered_clients: u64,
}

impl ServerStats {
    pub fn total_embeddings(&self) -> u64 {
        self.per_layer.iter().sum()
    }

    pub fn to_ids(&self) -> Vec<u64> {
        let mut v = vec![self.per_layer.len() as u64];
        v.extend_from_slice(&self.per_layer);
        v.extend_from_slice(&[
            self.bytes,
            self.requests,
            self.set_requests,
            self.get_requests,
            self.ids_written,
            self.ids_read,
            self.registered_clients,
        ]);
        v
    }

    pub fn from_ids(ids: &[u64]) -> Result<Self> {
        let n = *ids.first().ok_or_else(|| Error::Format("empty stats".into()))? as usize;
        if ids.len() != 1 + n + 7 {
            return Err(Error::Format(format!("stats with {} fields", ids.len())));
        }
        let rest = &ids[1 + n..];
        Ok(ServerStats {
            per_layer: ids[1..1 + n].to_vec(),
            bytes: rest[0],
            requests: rest[1],
            set_requests: rest[2],
            get_requests: rest[3],
            ids_written: rest[4],
            ids_read: rest[5],
            registered_clients: rest[6],
        })
    }

    /// Line-oriented `key=value` dump.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.per_layer.iter().enumerate() {
            s.push_str(&format!("layer{}_embeddings={c}\n", i + 1));
        }
        s.push_str(&format!(
            "bytes={}\nrequests={}\nset_requests={}\nget_requests={}\nids_written={}\nids_read={}\nregistered_clients={}\n",
            self.bytes,
            self.requests,
            self.set_requests,
            self.get_requests,
            self.ids_written,
            self.ids_read,
            self.registered_clients
        ));
        s
    }
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    sets: AtomicU64,
    gets: AtomicU64,
    ids_written: AtomicU64,
    ids_read: AtomicU64,
}

/// Push and pull IDs a client registered.
type Boundary = (Vec<u64>, Vec<u64>);

/// The embedding server: per-layer stores plus the boundary-set registry.
#[derive(Debug)]
pub struct EmbeddingServer {
    store: RwLock<EmbeddingStore>,
    registry: Mutex<BTreeMap<u64, Boundary>>,
    counters: Counters,
}

impl EmbeddingServer {
    pub fn new(num_layers: usize, dim: usize) -> Self {
        EmbeddingServer {
            store: RwLock::new(EmbeddingStore::new(num_layers, dim)),
            registry: Mutex::new(BTreeMap::new()),
            counters: Counters::default(),
        }
    }

    pub fn handle(&self, req: &Request) -> Response {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        match req {
            Request::SetBatch { layer, ids, dim, data } => {
                self.counters.sets.fetch_add(1, Ordering::Relaxed);
                let mut store = self.store.write().expect("store lock");
                if let Err(e) = store.check_layer(*layer as usize) {
                    return Response::Err { code: err_code::BAD_LAYER, msg: e.to_string() };
                }
                match store.set(*layer as usize, ids, *dim, data) {
                    Ok(n) => {
                        self.counters.ids_written.fetch_add(n as u64, Ordering::Relaxed);
                        Response::Ok(vec![n as u64])
                    }
                    Err(e) => Response::Err { code: err_code::DIM_MISMATCH, msg: e.to_string() },
                }
            }
            Request::GetBatch { layer, ids } => {
                self.counters.gets.fetch_add(1, Ordering::Relaxed);
                let store = self.store.read().expect("store lock");
                match store.get(*layer as usize, ids) {
                    Ok((found, data, missing)) => {
                        self.counters.ids_read.fetch_add(found.len() as u64, Ordering::Relaxed);
                        Response::Vecs { dim: store.dim(), found, data, missing }
                    }
                    Err(e) => Response::Err { code: err_code::BAD_LAYER, msg: e.to_string() },
                }
            }
            Request::Register { client, push, pull } => {
                let mut reg = self.registry.lock().expect("registry lock");
                if reg.contains_key(client) {
                    return Response::Err {
                        code: err_code::DUPLICATE_REGISTRATION,
                        msg: format!("client {client} already registered"),
                    };
                }
                reg.insert(*client, (push.clone(), pull.clone()));
                Response::Ok(vec![push.len() as u64, pull.len() as u64])
            }
            Request::Stats => Response::Ok(self.stats().to_ids()),
            Request::Query { client } => match self.registry.lock().expect("registry lock").get(client) {
                Some((push, pull)) => {
                    let mut v = vec![push.len() as u64];
                    v.extend_from_slice(push);
                    v.extend_from_slice(pull);
                    Response::Ok(v)
                }
                None => Response::Err { code: err_code::UNKNOWN_CLIENT, msg: format!("client {client} unknown") },
            },
        }
    }

    pub fn stats(&self) -> ServerStats {
        let store = self.store.read().expect("store lock");
        ServerStats {
            per_layer: (1..=store.num_layers()).map(|l| store.len(l) as u64).collect(),
            bytes: store.bytes() as u64,
            requests: self.counters.requests.load(Ordering::Relaxed),
            set_requests: self.counters.sets.load(Ordering::Relaxed),
            get_requests: self.counters.gets.load(Ordering::Relaxed),
            ids_written: self.counters.ids_written.load(Ordering::Relaxed),
            ids_read: self.counters.ids_read.load(Ordering::Relaxed),
            registered_clients: self.registry.lock().expect("registry lock").len() as u64,
        }
    }

    /// Every stored `(id, vector)` of one layer, by ascending ID.
    pub fn dump_layer(&self, layer: usize) -> Vec<(u64, Vec<f32>)> {
        self.store.read().expect("store lock").entries(layer)
    }
}

/// Accept loop serving one thread per connection.
pub struct TcpServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServerHandle {
    pub fn bind(server: Arc<EmbeddingServer>, addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let server = server.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(&server, stream) {
                                log::warn!("connection closed: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });
        log::info!("embedding server listening on {addr}");
        Ok(TcpServerHandle { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits (it only does so after `shutdown`).
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_connection(server: &EmbeddingServer, stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(msg) = read_frame(&mut reader)? {
        let resp = match Request::from_wire(msg) {
            Ok(req) => server.handle(&req),
            Err(e) => Response::Err { code: err_code::MALFORMED, msg: e.to_string() },
        };
        write_frame(&mut writer, &resp.to_wire())?;
        // keep batching replies while more pipelined requests are buffered
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_server_is_empty() {
        let s = EmbeddingServer::new(3, 4);
        let st = s.stats();
        assert_eq!(st.per_layer, vec![0, 0]);
        assert_eq!(st.bytes, 0);
        assert_eq!(st.requests, 0);
        assert_eq!(ServerStats::from_ids(&st.to_ids()).unwrap(), st);
        assert!(st.to_text().contains("layer2_embeddings=0\n"));
    }

    #[test]
    fn registration() {
        let s = EmbeddingServer::new(2, 1);
        let reg = Request::Register { client: 1, push: vec![3, 4], pull: vec![] };
        assert_eq!(s.handle(&reg), Response::Ok(vec![2, 0]));
        assert!(matches!(s.handle(&reg), Response::Err { code: err_code::DUPLICATE_REGISTRATION, .. }));
        assert_eq!(s.handle(&Request::Query { client: 1 }), Response::Ok(vec![2, 3, 4]));
        assert!(matches!(
            s.handle(&Request::Query { client: 2 }),
            Response::Err { code: err_code::UNKNOWN_CLIENT, .. }
        ));
    }

    #[test]
    fn errors_and_dump() {
        let s = EmbeddingServer::new(3, 2);
        let bad = Request::SetBatch { layer: 0, ids: vec![1], dim: 2, data: vec![0.0; 2] };
        assert!(matches!(s.handle(&bad), Response::Err { code: err_code::BAD_LAYER, .. }));
        let bad = Request::SetBatch { layer: 1, ids: vec![1], dim: 3, data: vec![0.0; 3] };
        assert!(matches!(s.handle(&bad), Response::Err { code: err_code::DIM_MISMATCH, .. }));
        let ok = Request::SetBatch { layer: 2, ids: vec![5, 1], dim: 2, data: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(s.handle(&ok), Response::Ok(vec![2]));
        assert_eq!(s.dump_layer(2), vec![(1, vec![3.0, 4.0]), (5, vec![1.0, 2.0])]);
        assert!(s.dump_layer(1).is_empty());
        assert_eq!(s.stats().requests, 3);
    }
}
