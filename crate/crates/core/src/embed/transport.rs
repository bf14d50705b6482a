use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;

use super::server::{EmbeddingServer, ServerStats};
use super::wire::{read_frame, write_frame, Request, Response};
use crate::error::{Error, Result};
use crate::timing::Traffic;

/// A request/response channel to the embedding server. Responses come back
/// in request order; all requests in one call may be in flight at once.
pub trait Transport: Send {
    fn roundtrip(&mut self, reqs: &[Request]) -> Result<Vec<Response>>;

    /// A second, independent connection to the same server.
    fn connect_again(&self) -> Result<Box<dyn Transport>>;
}

/// Calls straight into a shared server object.
#[derive(Clone)]
pub struct InProcTransport {
    server: Arc<EmbeddingServer>,
}

impl InProcTransport {
    pub fn new(server: Arc<EmbeddingServer>) -> Self {
        InProcTransport { server }
    }
}

impl Transport for InProcTransport {
    fn roundtrip(&mut self, reqs: &[Request]) -> Result<Vec<Response>> {
        Ok(reqs.iter().map(|r| self.server.handle(r)).collect())
    }

    fn connect_again(&self) -> Result<Box<dyn Transport>> {
        Ok(Box::new(self.clone()))
    }
}

/// Length-prefixed frames over TCP. A writer thread streams requests while
/// the caller reads responses, so large pipelines cannot deadlock on full
/// socket buffers.
pub struct TcpTransport {
    addr: SocketAddr,
    reader: BufReader<TcpStream>,
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("connect: {e}")))?;
        stream.set_nodelay(true)?;
        let addr = stream.peer_addr()?;
        Ok(TcpTransport { addr, reader: BufReader::new(stream.try_clone()?), stream })
    }
}

impl Transport for TcpTransport {
    fn roundtrip(&mut self, reqs: &[Request]) -> Result<Vec<Response>> {
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        let write_half = self.stream.try_clone()?;
        std::thread::scope(|s| {
            let writer = s.spawn(move || -> Result<()> {
                let mut w = BufWriter::new(write_half);
                for r in reqs {
                    write_frame(&mut w, &r.to_wire())?;
                }
                w.flush()?;
                Ok(())
            });
            let mut out = Vec::with_capacity(reqs.len());
            let mut read_err = None;
            for _ in 0..reqs.len() {
                match read_frame(&mut self.reader) {
                    Ok(Some(m)) => match Response::from_wire(m) {
                        Ok(r) => out.push(r),
                        Err(e) => {
                            read_err = Some(e);
                            break;
                        }
                    },
                    Ok(None) => {
                        read_err = Some(Error::Transport("server closed the connection".into()));
                        break;
                    }
                    Err(e) => {
                        read_err = Some(e);
                        break;
                    }
                }
            }
            if read_err.is_some() {
                let _ = self.stream.shutdown(std::net::Shutdown::Both);
            }
            let write_res = writer.join().map_err(|_| Error::Transport("writer thread panicked".into()))?;
            match read_err {
                Some(e) => Err(Error::Transport(e.to_string())),
                None => write_res.map(|_| out).map_err(|e| Error::Transport(e.to_string())),
            }
        })
    }

    fn connect_again(&self) -> Result<Box<dyn Transport>> {
        Ok(Box::new(TcpTransport::connect(self.addr)?))
    }
}

/// Vectors returned by a get.
#[derive(Debug, Clone, PartialEq)]
pub struct Fetched {
    pub dim: usize,
    pub found: Vec<u64>,
    pub data: Vec<f32>,
    pub missing: Vec<u64>,
}

/// Typed helpers over any transport.
pub struct EmbeddingClient {
    transport: Box<dyn Transport>,
    traffic: Traffic,
}

impl EmbeddingClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        EmbeddingClient { transport, traffic: Traffic::default() }
    }

    pub fn connect_again(&self) -> Result<EmbeddingClient> {
        Ok(EmbeddingClient::new(self.transport.connect_again()?))
    }

    /// Traffic through this client so far.
    pub fn traffic(&self) -> Traffic {
        self.traffic
    }

    /// Sends all requests pipelined; any ERR response becomes an error.
    pub fn pipeline(&mut self, reqs: &[Request]) -> Result<Vec<Response>> {
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        let resps = self.transport.roundtrip(reqs)?;
        if resps.len() != reqs.len() {
            return Err(Error::Transport(format!("{} responses for {} requests", resps.len(), reqs.len())));
        }
        self.traffic.calls += 1;
        self.traffic.requests += reqs.len() as u64;
        self.traffic.bytes += reqs.iter().map(Request::wire_len).sum::<u64>()
            + resps.iter().map(Response::wire_len).sum::<u64>();
        resps.into_iter().map(Response::into_result).collect()
    }

    fn one(&mut self, req: Request) -> Result<Response> {
        Ok(self.pipeline(std::slice::from_ref(&req))?.remove(0))
    }

    pub fn set_batch(&mut self, layer: usize, ids: Vec<u64>, dim: usize, data: Vec<f32>) -> Result<usize> {
        match self.one(Request::SetBatch { layer: layer as u8, ids, dim, data })? {
            Response::Ok(v) if v.len() == 1 => Ok(v[0] as usize),
            other => Err(unexpected(&other)),
        }
    }

    pub fn get_batch(&mut self, layer: usize, ids: Vec<u64>) -> Result<Fetched> {
        let mut r = self.get_many(vec![(layer, ids)])?;
        Ok(r.remove(0))
    }

    /// One pipelined GET per `(layer, ids)` entry.
    pub fn get_many(&mut self, batches: Vec<(usize, Vec<u64>)>) -> Result<Vec<Fetched>> {
        let reqs: Vec<Request> =
            batches.into_iter().map(|(l, ids)| Request::GetBatch { layer: l as u8, ids }).collect();
        self.pipeline(&reqs)?
            .into_iter()
            .map(|r| match r {
                Response::Vecs { dim, found, data, missing } => Ok(Fetched { dim, found, data, missing }),
                other => Err(unexpected(&other)),
            })
            .collect()
    }

    /// One pipelined SET per `(layer, ids, data)` entry; returns the total written.
    pub fn set_many(&mut self, dim: usize, batches: Vec<(usize, Vec<u64>, Vec<f32>)>) -> Result<usize> {
        let reqs: Vec<Request> = batches
            .into_iter()
            .map(|(l, ids, data)| Request::SetBatch { layer: l as u8, ids, dim, data })
            .collect();
        let mut total = 0;
        for r in self.pipeline(&reqs)? {
            match r {
                Response::Ok(v) if v.len() == 1 => total += v[0] as usize,
                other => return Err(unexpected(&other)),
            }
        }
        Ok(total)
    }

    pub fn register(&mut self, client: usize, push: &[usize], pull: &[usize]) -> Result<()> {
        let to64 = |v: &[usize]| v.iter().map(|&x| x as u64).collect();
        self.one(Request::Register { client: client as u64, push: to64(push), pull: to64(pull) })?;
        Ok(())
    }

    /// The push and pull sets a client registered.
    pub fn query(&mut self, client: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        match self.one(Request::Query { client: client as u64 })? {
            Response::Ok(v) if !v.is_empty() && (v[0] as usize) < v.len() => {
                let n = v[0] as usize;
                let conv = |s: &[u64]| s.iter().map(|&x| x as usize).collect();
                Ok((conv(&v[1..1 + n]), conv(&v[1 + n..])))
            }
            other => Err(unexpected(&other)),
        }
    }

    pub fn stats(&mut self) -> Result<ServerStats> {
        match self.one(Request::Stats)? {
            Response::Ok(v) => ServerStats::from_ids(&v),
            other => Err(unexpected(&other)),
        }
    }
}

fn unexpected(r: &Response) -> Error {
    Error::Transport(format!("unexpected response {r:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::server::TcpServerHandle;

    fn exercise(mut c: EmbeddingClient) {
        c.register(0, &[1, 2], &[7]).unwrap();
        assert_eq!(c.query(0).unwrap(), (vec![1, 2], vec![7]));
        assert!(matches!(c.register(0, &[], &[]), Err(Error::Server { .. })));
        assert_eq!(c.set_batch(1, vec![1, 2], 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 2);
        let f = c.get_batch(1, vec![2, 9]).unwrap();
        assert_eq!((f.found, f.data, f.missing), (vec![2], vec![3.0, 4.0], vec![9]));
        assert!(c.get_batch(1, vec![]).unwrap().found.is_empty());
        let before = c.traffic();
        let st = c.stats().unwrap();
        assert_eq!(c.traffic().since(&before).calls, 1);
        assert_eq!(st.per_layer, vec![2, 0]);
        assert_eq!(st.registered_clients, 1);
    }

    #[test]
    fn inproc() {
        let server = Arc::new(EmbeddingServer::new(3, 2));
        exercise(EmbeddingClient::new(Box::new(InProcTransport::new(server))));
    }

    #[test]
    fn tcp_and_large_pipeline() {
        let server = Arc::new(EmbeddingServer::new(3, 2));
        let h = TcpServerHandle::bind(server.clone(), "127.0.0.1:0").unwrap();
        exercise(EmbeddingClient::new(Box::new(TcpTransport::connect(h.local_addr()).unwrap())));

        // enough pipelined traffic to fill socket buffers in both directions
        let mut c = EmbeddingClient::new(Box::new(TcpTransport::connect(h.local_addr()).unwrap()));
        let ids: Vec<u64> = (0..10_000).collect();
        let data: Vec<f32> = (0..20_000).map(|x| x as f32).collect();
        let batches = (0..20).map(|_| (2usize, ids.clone(), data.clone())).collect();
        assert_eq!(c.set_many(2, batches).unwrap(), 200_000);
        let got = c.get_many((0..20).map(|_| (2usize, ids.clone())).collect()).unwrap();
        assert!(got.iter().all(|f| f.data == data));
        let mut second = c.connect_again().unwrap();
        assert_eq!(second.stats().unwrap().per_layer, vec![2, 10_000]);
        h.shutdown();
    }
}
