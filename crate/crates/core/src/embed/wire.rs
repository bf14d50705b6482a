//! Binary protocol between clients and the embedding server.
//!
//! A message is `op u8, layer u8, u32 id count, u64 ids, u32 payload length,
//! payload`, little-endian. Over TCP each message is preceded by its u32
//! byte length.
//!
//! * SET_BATCH: payload `u32 dim` then `ids.len() * dim` f32 values.
//! * GET_BATCH: ids to fetch, empty payload.
//! * REGISTER: ids `[client, n_push, push.., pull..]`.
//! * STATS: no ids, no payload.
//! * QUERY: ids `[client]`; answered with OK `[n_push, push.., pull..]`.
//! * OK: ids carry a list of counts.
//! * VECS: ids are found then missing; payload `u32 dim, u32 found` then f32 rows.
//! * ERR: error code in the layer byte, UTF-8 message as payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Op {
    SetBatch = 1,
    GetBatch = 2,
    Register = 3,
    Stats = 4,
    Query = 5,
    Ok = 0x80,
    Vecs = 0x81,
    Err = 0x82,
}

impl Op {
    pub fn from_u8(b: u8) -> Option<Op> {
        Some(match b {
            1 => Op::SetBatch,
            2 => Op::GetBatch,
            3 => Op::Register,
            4 => Op::Stats,
            5 => Op::Query,
            0x80 => Op::Ok,
            0x81 => Op::Vecs,
            0x82 => Op::Err,
            _ => return None,
        })
    }
}

pub mod err_code {
    pub const BAD_LAYER: u8 = 1;
    pub const DIM_MISMATCH: u8 = 2;
    pub const DUPLICATE_REGISTRATION: u8 = 3;
    pub const MALFORMED: u8 = 4;
    pub const UNKNOWN_CLIENT: u8 = 5;
}

/// One frame on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub op: Op,
    pub layer: u8,
    pub ids: Vec<u64>,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn encoded_len(&self) -> usize {
        2 + 4 + 8 * self.ids.len() + 4 + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.op as u8);
        out.push(self.layer);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<WireMessage> {
        let mut cur = Cursor { buf, pos: 0 };
        let op_byte = cur.take(1)?[0];
        let op = Op::from_u8(op_byte).ok_or_else(|| Error::Format(format!("unknown op 0x{op_byte:02x}")))?;
        let layer = cur.take(1)?[0];
        let n = cur.u32()? as usize;
        if n > (buf.len() - cur.pos) / 8 {
            return Err(Error::Format(format!("id count {n} exceeds message size")));
        }
        let ids = (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let plen = cur.u32()? as usize;
        let payload = cur.take(plen)?.to_vec();
        if cur.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - cur.pos)));
        }
        Ok(WireMessage { op, layer, ids, payload })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("truncated message".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 30;

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<()> {
    let body = msg.encode();
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<WireMessage>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Format(format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    WireMessage::decode(&body).map(Some)
}

/// Typed client requests.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    SetBatch { layer: u8, ids: Vec<u64>, dim: usize, data: Vec<f32> },
    GetBatch { layer: u8, ids: Vec<u64> },
    Register { client: u64, push: Vec<u64>, pull: Vec<u64> },
    Stats,
    Query { client: u64 },
}

/// Typed server responses.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(Vec<u64>),
    Vecs { dim: usize, found: Vec<u64>, data: Vec<f32>, missing: Vec<u64> },
    Err { code: u8, msg: String },
}

fn f32_bytes(dim: usize, extra: &[u32], data: &[f32]) -> Vec<u8> {
    let mut p = Vec::with_capacity(4 + 4 * extra.len() + 4 * data.len());
    p.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in extra {
        p.extend_from_slice(&e.to_le_bytes());
    }
    for x in data {
        p.extend_from_slice(&x.to_le_bytes());
    }
    p
}

fn parse_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format("payload is not a whole number of f32 values".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

fn header_u32(payload: &[u8], i: usize) -> Result<u32> {
    payload
        .get(4 * i..4 * i + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("payload header truncated".into()))
}

/// Framed size of a message with `ids` IDs and a `payload`-byte payload.
fn framed(ids: usize, payload: usize) -> u64 {
    (4 + 2 + 4 + 8 * ids + 4 + payload) as u64
}

impl Request {
    /// Bytes this request occupies on the wire, frame header included.
    pub fn wire_len(&self) -> u64 {
        match self {
            Request::SetBatch { ids, data, .. } => framed(ids.len(), 4 + 4 * data.len()),
            Request::GetBatch { ids, .. } => framed(ids.len(), 0),
            Request::Register { push, pull, .. } => framed(2 + push.len() + pull.len(), 0),
            Request::Stats => framed(0, 0),
            Request::Query { .. } => framed(1, 0),
        }
    }

    pub fn to_wire(&self) -> WireMessage {
        match self {
            Request::SetBatch { layer, ids, dim, data } => WireMessage {
                op: Op::SetBatch,
                layer: *layer,
                ids: ids.clone(),
                payload: f32_bytes(*dim, &[], data),
            },
            Request::GetBatch { layer, ids } => {
                WireMessage { op: Op::GetBatch, layer: *layer, ids: ids.clone(), payload: vec![] }
            }
            Request::Register { client, push, pull } => {
                let mut ids = vec![*client, push.len() as u64];
                ids.extend_from_slice(push);
                ids.extend_from_slice(pull);
                WireMessage { op: Op::Register, layer: 0, ids, payload: vec![] }
            }
            Request::Stats => WireMessage { op: Op::Stats, layer: 0, ids: vec![], payload: vec![] },
            Request::Query { client } => WireMessage { op: Op::Query, layer: 0, ids: vec![*client], payload: vec![] },
        }
    }

    pub fn from_wire(m: WireMessage) -> Result<Request> {
        Ok(match m.op {
            Op::SetBatch => {
                let dim = header_u32(&m.payload, 0)? as usize;
                let data = parse_f32s(&m.payload[4..])?;
                if data.len() != m.ids.len() * dim {
                    return Err(Error::Format(format!(
                        "{} values for {} ids of width {dim}",
                        data.len(),
                        m.ids.len()
                    )));
                }
                Request::SetBatch { layer: m.layer, ids: m.ids, dim, data }
            }
            Op::GetBatch => Request::GetBatch { layer: m.layer, ids: m.ids },
            Op::Register => {
                if m.ids.len() < 2 || m.ids[1] as usize > m.ids.len() - 2 {
                    return Err(Error::Format("malformed registration".into()));
                }
                let n_push = m.ids[1] as usize;
                Request::Register {
                    client: m.ids[0],
                    push: m.ids[2..2 + n_push].to_vec(),
                    pull: m.ids[2 + n_push..].to_vec(),
                }
            }
            Op::Stats => Request::Stats,
            Op::Query => match m.ids.as_slice() {
                [c] => Request::Query { client: *c },
                _ => return Err(Error::Format("query takes exactly one client id".into())),
            },
            other => return Err(Error::Format(format!("{other:?} is not a request"))),
        })
    }
}

impl Response {
    pub fn wire_len(&self) -> u64 {
        match self {
            Response::Ok(v) => framed(v.len(), 0),
            Response::Vecs { found, data, missing, .. } => framed(found.len() + missing.len(), 8 + 4 * data.len()),
            Response::Err { msg, .. } => framed(0, msg.len()),
        }
    }

    pub fn to_wire(&self) -> WireMessage {
        match self {
            Response::Ok(v) => WireMessage { op: Op::Ok, layer: 0, ids: v.clone(), payload: vec![] },
            Response::Vecs { dim, found, data, missing } => {
                let mut ids = found.clone();
                ids.extend_from_slice(missing);
                WireMessage { op: Op::Vecs, layer: 0, ids, payload: f32_bytes(*dim, &[found.len() as u32], data) }
            }
            Response::Err { code, msg } => {
                WireMessage { op: Op::Err, layer: *code, ids: vec![], payload: msg.as_bytes().to_vec() }
            }
        }
    }

    pub fn from_wire(m: WireMessage) -> Result<Response> {
        Ok(match m.op {
            Op::Ok => Response::Ok(m.ids),
            Op::Vecs => {
                let dim = header_u32(&m.payload, 0)? as usize;
                let n_found = header_u32(&m.payload, 1)? as usize;
                let data = parse_f32s(&m.payload[8..])?;
                if n_found > m.ids.len() || data.len() != n_found * dim {
                    return Err(Error::Format("inconsistent vector payload".into()));
                }
                let mut found = m.ids;
                let missing = found.split_off(n_found);
                Response::Vecs { dim, found, data, missing }
            }
            Op::Err => Response::Err { code: m.layer, msg: String::from_utf8_lossy(&m.payload).into_owned() },
            other => return Err(Error::Format(format!("{other:?} is not a response"))),
        })
    }

    /// Converts an ERR response into an `Error`.
    pub fn into_result(self) -> Result<Response> {
        match self {
            Response::Err { code, msg } => Err(Error::Server { code, msg }),
            ok => Ok(ok),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let m = Request::SetBatch { layer: 2, ids: vec![1, 5], dim: 2, data: vec![1.0, -2.5, 3.0, 0.0] }.to_wire();
        let mut buf = Vec::new();
        write_frame(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 4 + m.encoded_len());
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap(), Some(m));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn typed_round_trip() {
        let reqs = [
            Request::GetBatch { layer: 1, ids: vec![] },
            Request::Register { client: 3, push: vec![1, 2], pull: vec![9] },
            Request::Stats,
            Request::Query { client: 0 },
        ];
        for r in reqs {
            assert_eq!(r.wire_len() as usize, 4 + r.to_wire().encoded_len());
            assert_eq!(Request::from_wire(WireMessage::decode(&r.to_wire().encode()).unwrap()).unwrap(), r);
        }
        let resps = [
            Response::Ok(vec![4, 0]),
            Response::Vecs { dim: 1, found: vec![2], data: vec![0.5], missing: vec![3, 4] },
            Response::Vecs { dim: 3, found: vec![], data: vec![], missing: vec![] },
            Response::Err { code: err_code::BAD_LAYER, msg: "nope".into() },
        ];
        for r in resps {
            assert_eq!(r.wire_len() as usize, 4 + r.to_wire().encoded_len());
            assert_eq!(Response::from_wire(WireMessage::decode(&r.to_wire().encode()).unwrap()).unwrap(), r);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(WireMessage::decode(&[]).is_err());
        assert!(WireMessage::decode(&[9, 0, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        // claims a billion ids
        assert!(WireMessage::decode(&[1, 0, 0, 0, 0, 64, 0, 0, 0, 0]).is_err());
        let mut ok = Request::Stats.to_wire().encode();
        ok.push(0);
        assert!(WireMessage::decode(&ok).is_err());
        let bad_reg = WireMessage { op: Op::Register, layer: 0, ids: vec![1, 5], payload: vec![] };
        assert!(Request::from_wire(bad_reg).is_err());
    }
}
