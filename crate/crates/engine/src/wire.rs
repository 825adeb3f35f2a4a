//! Binary protocol. Every frame is `u32 payload length`, `u8 opcode`,
//! payload; all integers and floats are little-endian. A response carries
//! the opcode of its request and starts with a status byte.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use lignn_core::graph::EdgeView;
use lignn_core::samplers::{NeighborSample, SampleEntry, Strategy};
use lignn_core::NodeRef;
use thiserror::Error;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 64 << 20;

pub const OP_SAMPLE_NEIGHBORS: u8 = 0x01;
pub const OP_GET_FEATURES: u8 = 0x02;
pub const OP_PPR_TWO_HOP: u8 = 0x03;
pub const OP_PPR_PUSH_BATCH: u8 = 0x04;
pub const OP_TEMPORAL_LAST_N: u8 = 0x05;
pub const OP_HEALTH: u8 = 0x06;
/// Raw out-adjacency of owned nodes, used by client-side multi-hop sampling.
pub const OP_ADJACENCY: u8 = 0x07;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotOwned = 1,
    BadRequest = 2,
    Internal = 3,
}

impl Status {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Status::Ok,
            1 => Status::NotOwned,
            2 => Status::BadRequest,
            3 => Status::Internal,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
    #[error("unknown strategy {0}")]
    UnknownStrategy(u8),
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("invalid utf-8 in string field")]
    Utf8,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Strategy-specific parameters of a SampleNeighbors request.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleParams {
    Random { fanouts: Vec<u32>, rng_seed: u64 },
    Weighted { fanouts: Vec<u32>, multipliers: BTreeMap<u16, f64>, rng_seed: u64 },
    PprPush { alpha: f64, r_max: f64, top_k: u32 },
    PprTwoHop { alpha: f64, walks: u32, top_k: u32, rng_seed: u64 },
    Temporal { edge_type: u16, before_ts: i64, n: u32 },
}

impl SampleParams {
    pub fn strategy(&self) -> Strategy {
        match self {
            SampleParams::Random { .. } => Strategy::Random,
            SampleParams::Weighted { .. } => Strategy::Weighted,
            SampleParams::PprPush { .. } => Strategy::PprPush,
            SampleParams::PprTwoHop { .. } => Strategy::PprTwoHop,
            SampleParams::Temporal { .. } => Strategy::Temporal,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    SampleNeighbors { seed: NodeRef, params: SampleParams },
    GetFeatures { node: NodeRef },
    PprTwoHop { node: NodeRef, alpha: f64, walks: u32, top_k: u32, rng_seed: u64 },
    PprPushBatch { seeds: Vec<NodeRef>, alpha: f64, r_max: f64, top_k: u32 },
    TemporalLastN { node: NodeRef, edge_type: u16, before_ts: i64, n: u32 },
    Health,
    Adjacency { nodes: Vec<NodeRef> },
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::SampleNeighbors { .. } => OP_SAMPLE_NEIGHBORS,
            Request::GetFeatures { .. } => OP_GET_FEATURES,
            Request::PprTwoHop { .. } => OP_PPR_TWO_HOP,
            Request::PprPushBatch { .. } => OP_PPR_PUSH_BATCH,
            Request::TemporalLastN { .. } => OP_TEMPORAL_LAST_N,
            Request::Health => OP_HEALTH,
            Request::Adjacency { .. } => OP_ADJACENCY,
        }
    }

    /// Nodes whose owner must serve the request.
    pub fn routed_nodes(&self) -> Vec<NodeRef> {
        match self {
            Request::SampleNeighbors { seed, .. } => vec![*seed],
            Request::GetFeatures { node } | Request::PprTwoHop { node, .. } | Request::TemporalLastN { node, .. } => {
                vec![*node]
            }
            Request::PprPushBatch { seeds, .. } => seeds.clone(),
            Request::Adjacency { nodes } => nodes.clone(),
            Request::Health => Vec::new(),
        }
    }
}

/// Per-seed outcome: the sampled hops or an error message.
pub type SampleResult = Result<Vec<NeighborSample>, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct HealthInfo {
    pub partition: u32,
    pub partitions: u32,
    pub epoch: u64,
    pub node_counts: BTreeMap<u16, u64>,
    pub edge_counts: BTreeMap<u16, u64>,
}

/// Out-adjacency of one node. Unlike the rest of the protocol, nodes here
/// carry their dense index so clients can resolve references.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyRun {
    pub node: NodeRef,
    pub edges: Vec<EdgeView>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Samples(Vec<SampleResult>),
    Features(Option<Vec<f64>>),
    Temporal(Vec<(NodeRef, i64)>),
    Health(HealthInfo),
    Adjacency(Vec<Result<AdjacencyRun, String>>),
    /// Message accompanying a non-OK status.
    Error(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub opcode: u8,
    pub status: Status,
    pub body: Body,
}

impl Response {
    pub fn ok(opcode: u8, body: Body) -> Self {
        Self { opcode, status: Status::Ok, body }
    }

    pub fn error(opcode: u8, status: Status, message: impl Into<String>) -> Self {
        Self { opcode, status, body: Body::Error(message.into()) }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection fits in u32"));
    }
    fn node(&mut self, n: NodeRef) {
        self.u16(n.node_type);
        self.u64(n.node_id);
    }
    fn indexed_node(&mut self, n: NodeRef) {
        self.node(n);
        self.u32(n.index);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        v.iter().for_each(|x| self.u32(*x));
    }
    fn nodes(&mut self, v: &[NodeRef]) {
        self.len(v.len());
        v.iter().for_each(|n| self.node(*n));
    }
    fn sample(&mut self, s: &NeighborSample) {
        self.node(s.seed);
        self.u8(s.strategy as u8);
        self.u8(u8::from(s.truncated));
        self.len(s.entries.len());
        for e in &s.entries {
            self.node(e.node);
            self.f64(e.score);
            self.u32(e.hop);
        }
    }
    fn counts(&mut self, m: &BTreeMap<u16, u64>) {
        self.len(m.len());
        for (k, v) in m {
            self.u16(*k);
            self.u64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated { needed: n - self.buf.len() });
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        Ok(self.u8()? != 0)
    }
    /// A collection length, checked against the bytes left so a corrupt
    /// count cannot trigger a huge allocation.
    fn len(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        let needed = n.saturating_mul(min_item.max(1));
        if needed > self.buf.len() && min_item > 0 {
            return Err(WireError::Truncated { needed: needed - self.buf.len() });
        }
        Ok(n)
    }
    fn node(&mut self) -> Result<NodeRef, WireError> {
        Ok(NodeRef::key(self.u16()?, self.u64()?))
    }
    fn indexed_node(&mut self) -> Result<NodeRef, WireError> {
        Ok(NodeRef::new(self.u16()?, self.u64()?, self.u32()?))
    }
    fn str(&mut self) -> Result<String, WireError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Utf8)
    }
    fn f64s(&mut self) -> Result<Vec<f64>, WireError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn u32s(&mut self) -> Result<Vec<u32>, WireError> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn nodes(&mut self) -> Result<Vec<NodeRef>, WireError> {
        let n = self.len(10)?;
        (0..n).map(|_| self.node()).collect()
    }
    fn strategy(&mut self) -> Result<Strategy, WireError> {
        let v = self.u8()?;
        Strategy::from_u8(v).ok_or(WireError::UnknownStrategy(v))
    }
    fn sample(&mut self) -> Result<NeighborSample, WireError> {
        let seed = self.node()?;
        let strategy = self.strategy()?;
        let truncated = self.bool()?;
        let n = self.len(22)?;
        let entries = (0..n)
            .map(|_| Ok(SampleEntry { node: self.node()?, score: self.f64()?, hop: self.u32()? }))
            .collect::<Result<_, WireError>>()?;
        Ok(NeighborSample { seed, strategy, entries, truncated })
    }
    fn counts(&mut self) -> Result<BTreeMap<u16, u64>, WireError> {
        let n = self.len(10)?;
        (0..n).map(|_| Ok((self.u16()?, self.u64()?))).collect()
    }
    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.buf.len()))
        }
    }
}

fn frame(opcode: u8, payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 5);
    out.extend_from_slice(&u32::try_from(payload.len()).expect("frame fits in u32").to_le_bytes());
    out.push(opcode);
    out.extend_from_slice(&payload);
    out
}

fn write_params(w: &mut Writer, p: &SampleParams) {
    match p {
        SampleParams::Random { fanouts, rng_seed } => {
            w.u32s(fanouts);
            w.u64(*rng_seed);
        }
        SampleParams::Weighted { fanouts, multipliers, rng_seed } => {
            w.u32s(fanouts);
            w.len(multipliers.len());
            for (t, m) in multipliers {
                w.u16(*t);
                w.f64(*m);
            }
            w.u64(*rng_seed);
        }
        SampleParams::PprPush { alpha, r_max, top_k } => {
            w.f64(*alpha);
            w.f64(*r_max);
            w.u32(*top_k);
        }
        SampleParams::PprTwoHop { alpha, walks, top_k, rng_seed } => {
            w.f64(*alpha);
            w.u32(*walks);
            w.u32(*top_k);
            w.u64(*rng_seed);
        }
        SampleParams::Temporal { edge_type, before_ts, n } => {
            w.u16(*edge_type);
            w.i64(*before_ts);
            w.u32(*n);
        }
    }
}

fn read_params(r: &mut Reader, strategy: Strategy) -> Result<SampleParams, WireError> {
    Ok(match strategy {
        Strategy::Random => SampleParams::Random { fanouts: r.u32s()?, rng_seed: r.u64()? },
        Strategy::Weighted => {
            let fanouts = r.u32s()?;
            let n = r.len(10)?;
            let multipliers = (0..n).map(|_| Ok((r.u16()?, r.f64()?))).collect::<Result<_, WireError>>()?;
            SampleParams::Weighted { fanouts, multipliers, rng_seed: r.u64()? }
        }
        Strategy::PprPush => SampleParams::PprPush { alpha: r.f64()?, r_max: r.f64()?, top_k: r.u32()? },
        Strategy::PprTwoHop => {
            SampleParams::PprTwoHop { alpha: r.f64()?, walks: r.u32()?, top_k: r.u32()?, rng_seed: r.u64()? }
        }
        Strategy::Temporal => SampleParams::Temporal { edge_type: r.u16()?, before_ts: r.i64()?, n: r.u32()? },
    })
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match req {
        Request::SampleNeighbors { seed, params } => {
            w.u8(params.strategy() as u8);
            w.node(*seed);
            write_params(&mut w, params);
        }
        Request::GetFeatures { node } => w.node(*node),
        Request::PprTwoHop { node, alpha, walks, top_k, rng_seed } => {
            w.node(*node);
            w.f64(*alpha);
            w.u32(*walks);
            w.u32(*top_k);
            w.u64(*rng_seed);
        }
        Request::PprPushBatch { seeds, alpha, r_max, top_k } => {
            w.nodes(seeds);
            w.f64(*alpha);
            w.f64(*r_max);
            w.u32(*top_k);
        }
        Request::TemporalLastN { node, edge_type, before_ts, n } => {
            w.node(*node);
            w.u16(*edge_type);
            w.i64(*before_ts);
            w.u32(*n);
        }
        Request::Health => {}
        Request::Adjacency { nodes } => w.nodes(nodes),
    }
    frame(req.opcode(), w.0)
}

pub fn decode_request(opcode: u8, payload: &[u8]) -> Result<Request, WireError> {
    let mut r = Reader { buf: payload };
    let req = match opcode {
        OP_SAMPLE_NEIGHBORS => {
            let strategy = r.strategy()?;
            let seed = r.node()?;
            Request::SampleNeighbors { seed, params: read_params(&mut r, strategy)? }
        }
        OP_GET_FEATURES => Request::GetFeatures { node: r.node()? },
        OP_PPR_TWO_HOP => Request::PprTwoHop {
            node: r.node()?,
            alpha: r.f64()?,
            walks: r.u32()?,
            top_k: r.u32()?,
            rng_seed: r.u64()?,
        },
        OP_PPR_PUSH_BATCH => {
            Request::PprPushBatch { seeds: r.nodes()?, alpha: r.f64()?, r_max: r.f64()?, top_k: r.u32()? }
        }
        OP_TEMPORAL_LAST_N => {
            Request::TemporalLastN { node: r.node()?, edge_type: r.u16()?, before_ts: r.i64()?, n: r.u32()? }
        }
        OP_HEALTH => Request::Health,
        OP_ADJACENCY => Request::Adjacency { nodes: r.nodes()? },
        other => return Err(WireError::UnknownOpcode(other)),
    };
    r.finish()?;
    Ok(req)
}

fn write_result<T>(w: &mut Writer, r: &Result<T, String>, f: impl FnOnce(&mut Writer, &T)) {
    match r {
        Ok(x) => {
            w.u8(1);
            f(w, x);
        }
        Err(e) => {
            w.u8(0);
            w.str(e);
        }
    }
}

fn read_result<T>(
    r: &mut Reader,
    f: impl FnOnce(&mut Reader) -> Result<T, WireError>,
) -> Result<Result<T, String>, WireError> {
    Ok(if r.bool()? { Ok(f(r)?) } else { Err(r.str()?) })
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u8(resp.status as u8);
    match &resp.body {
        Body::Samples(list) => {
            w.len(list.len());
            for item in list {
                write_result(&mut w, item, |w, hops| {
                    w.len(hops.len());
                    hops.iter().for_each(|s| w.sample(s));
                });
            }
        }
        Body::Features(f) => match f {
            Some(v) => {
                w.u8(1);
                w.f64s(v);
            }
            None => w.u8(0),
        },
        Body::Temporal(events) => {
            w.len(events.len());
            for (n, ts) in events {
                w.node(*n);
                w.i64(*ts);
            }
        }
        Body::Health(h) => {
            w.u32(h.partition);
            w.u32(h.partitions);
            w.u64(h.epoch);
            w.counts(&h.node_counts);
            w.counts(&h.edge_counts);
        }
        Body::Adjacency(list) => {
            w.len(list.len());
            for item in list {
                write_result(&mut w, item, |w, run| {
                    w.indexed_node(run.node);
                    w.len(run.edges.len());
                    for e in &run.edges {
                        w.indexed_node(e.node);
                        w.u16(e.edge_type);
                        w.f64(e.weight);
                        w.i64(e.timestamp);
                    }
                });
            }
        }
        Body::Error(msg) => w.str(msg),
    }
    frame(resp.opcode, w.0)
}

pub fn decode_response(opcode: u8, payload: &[u8]) -> Result<Response, WireError> {
    let mut r = Reader { buf: payload };
    let raw = r.u8()?;
    let status = Status::from_u8(raw).ok_or(WireError::UnknownStatus(raw))?;
    let body = if status != Status::Ok {
        Body::Error(r.str()?)
    } else {
        match opcode {
            OP_SAMPLE_NEIGHBORS | OP_PPR_TWO_HOP | OP_PPR_PUSH_BATCH => {
                let n = r.len(1)?;
                let list = (0..n)
                    .map(|_| {
                        read_result(&mut r, |r| {
                            let hops = r.len(16)?;
                            (0..hops).map(|_| r.sample()).collect()
                        })
                    })
                    .collect::<Result<_, WireError>>()?;
                Body::Samples(list)
            }
            OP_GET_FEATURES => Body::Features(if r.bool()? { Some(r.f64s()?) } else { None }),
            OP_TEMPORAL_LAST_N => {
                let n = r.len(18)?;
                Body::Temporal((0..n).map(|_| Ok((r.node()?, r.i64()?))).collect::<Result<_, WireError>>()?)
            }
            OP_HEALTH => Body::Health(HealthInfo {
                partition: r.u32()?,
                partitions: r.u32()?,
                epoch: r.u64()?,
                node_counts: r.counts()?,
                edge_counts: r.counts()?,
            }),
            OP_ADJACENCY => {
                let n = r.len(1)?;
                let list = (0..n)
                    .map(|_| {
                        read_result(&mut r, |r| {
                            let node = r.indexed_node()?;
                            let m = r.len(32)?;
                            let edges = (0..m)
                                .map(|_| {
                                    Ok(EdgeView {
                                        node: r.indexed_node()?,
                                        edge_type: r.u16()?,
                                        weight: r.f64()?,
                                        timestamp: r.i64()?,
                                    })
                                })
                                .collect::<Result<_, WireError>>()?;
                            Ok(AdjacencyRun { node, edges })
                        })
                    })
                    .collect::<Result<_, WireError>>()?;
                Body::Adjacency(list)
            }
            other => return Err(WireError::UnknownOpcode(other)),
        }
    };
    r.finish()?;
    Ok(Response { opcode, status, body })
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(u8, Vec<u8>)>, WireError> {
    let mut header = [0u8; 5];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some((header[4], payload)))
}

pub fn write_frame<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(bytes)
}

/// Splits an encoded frame into opcode and payload.
pub fn split_frame(bytes: &[u8]) -> Result<(u8, &[u8]), WireError> {
    let mut r = Reader { buf: bytes };
    let len = r.u32()? as usize;
    let op = r.u8()?;
    let payload = r.take(len)?;
    r.finish()?;
    Ok((op, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lignn_core::samplers::Strategy as Sampler;
    use proptest::prelude::*;
    use proptest::strategy::Strategy;

    fn node() -> impl Strategy<Value = NodeRef> {
        (any::<u16>(), any::<u64>()).prop_map(|(t, id)| NodeRef::key(t, id))
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
    }

    fn params() -> impl Strategy<Value = SampleParams> {
        prop_oneof![
            (prop::collection::vec(any::<u32>(), 0..4), any::<u64>())
                .prop_map(|(fanouts, rng_seed)| SampleParams::Random { fanouts, rng_seed }),
            (prop::collection::vec(any::<u32>(), 0..4), prop::collection::btree_map(any::<u16>(), finite(), 0..4), any::<u64>())
                .prop_map(|(fanouts, multipliers, rng_seed)| SampleParams::Weighted { fanouts, multipliers, rng_seed }),
            (finite(), finite(), any::<u32>()).prop_map(|(alpha, r_max, top_k)| SampleParams::PprPush { alpha, r_max, top_k }),
            (finite(), any::<u32>(), any::<u32>(), any::<u64>())
                .prop_map(|(alpha, walks, top_k, rng_seed)| SampleParams::PprTwoHop { alpha, walks, top_k, rng_seed }),
            (any::<u16>(), any::<i64>(), any::<u32>())
                .prop_map(|(edge_type, before_ts, n)| SampleParams::Temporal { edge_type, before_ts, n }),
        ]
    }

    pub(crate) fn request() -> impl Strategy<Value = Request> {
        prop_oneof![
            (node(), params()).prop_map(|(seed, params)| Request::SampleNeighbors { seed, params }),
            node().prop_map(|node| Request::GetFeatures { node }),
            (node(), finite(), any::<u32>(), any::<u32>(), any::<u64>()).prop_map(|(node, alpha, walks, top_k, rng_seed)| {
                Request::PprTwoHop { node, alpha, walks, top_k, rng_seed }
            }),
            (prop::collection::vec(node(), 0..6), finite(), finite(), any::<u32>())
                .prop_map(|(seeds, alpha, r_max, top_k)| Request::PprPushBatch { seeds, alpha, r_max, top_k }),
            (node(), any::<u16>(), any::<i64>(), any::<u32>())
                .prop_map(|(node, edge_type, before_ts, n)| Request::TemporalLastN { node, edge_type, before_ts, n }),
            Just(Request::Health),
            prop::collection::vec(node(), 0..6).prop_map(|nodes| Request::Adjacency { nodes }),
        ]
    }

    fn sample() -> impl Strategy<Value = NeighborSample> {
        (node(), 0u8..5, any::<bool>(), prop::collection::vec((node(), finite(), any::<u32>()), 0..5)).prop_map(
            |(seed, s, truncated, entries)| NeighborSample {
                seed,
                strategy: Sampler::from_u8(s).unwrap(),
                truncated,
                entries: entries.into_iter().map(|(node, score, hop)| SampleEntry { node, score, hop }).collect(),
            },
        )
    }

    fn text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 é:_-]{0,20}"
    }

    fn indexed() -> impl Strategy<Value = NodeRef> {
        (any::<u16>(), any::<u64>(), any::<u32>()).prop_map(|(t, id, i)| NodeRef::new(t, id, i))
    }

    fn run() -> impl Strategy<Value = AdjacencyRun> {
        let edge = (indexed(), any::<u16>(), finite(), any::<i64>())
            .prop_map(|(node, edge_type, weight, timestamp)| EdgeView { node, edge_type, weight, timestamp });
        (indexed(), prop::collection::vec(edge, 0..4)).prop_map(|(node, edges)| AdjacencyRun { node, edges })
    }

    pub(crate) fn response() -> impl Strategy<Value = Response> {
        let samples = prop::collection::vec(
            prop_oneof![prop::collection::vec(sample(), 0..3).prop_map(Ok), text().prop_map(Err)],
            0..4,
        );
        let counts = || prop::collection::btree_map(any::<u16>(), any::<u64>(), 0..4);
        prop_oneof![
            (prop_oneof![Just(OP_SAMPLE_NEIGHBORS), Just(OP_PPR_TWO_HOP), Just(OP_PPR_PUSH_BATCH)], samples)
                .prop_map(|(op, s)| Response::ok(op, Body::Samples(s))),
            prop::option::of(prop::collection::vec(finite(), 0..8))
                .prop_map(|f| Response::ok(OP_GET_FEATURES, Body::Features(f))),
            prop::collection::vec((node(), any::<i64>()), 0..6)
                .prop_map(|t| Response::ok(OP_TEMPORAL_LAST_N, Body::Temporal(t))),
            (any::<u32>(), any::<u32>(), any::<u64>(), counts(), counts()).prop_map(
                |(partition, partitions, epoch, node_counts, edge_counts)| {
                    Response::ok(OP_HEALTH, Body::Health(HealthInfo { partition, partitions, epoch, node_counts, edge_counts }))
                }
            ),
            prop::collection::vec(
                prop_oneof![run().prop_map(Ok), text().prop_map(Err)],
                0..4
            )
            .prop_map(|a| Response::ok(OP_ADJACENCY, Body::Adjacency(a))),
            (1u8..=7, 1u8..4, text()).prop_map(|(op, s, m)| Response::error(op, Status::from_u8(s).unwrap(), m)),
        ]
    }

    /// Field-wise equality that also compares float bit patterns (so `-0.0`
    /// and `0.0` are told apart).
    fn same_bits<T: std::fmt::Debug>(a: &T, b: &T) -> bool {
        format!("{a:?}") == format!("{b:?}")
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn request_round_trip(req in request()) {
            let bytes = encode_request(&req);
            let (op, payload) = split_frame(&bytes).unwrap();
            prop_assert_eq!(op, req.opcode());
            let back = decode_request(op, payload).unwrap();
            prop_assert!(same_bits(&back, &req), "{:?} vs {:?}", back, req);
        }

        #[test]
        fn response_round_trip(resp in response()) {
            let bytes = encode_response(&resp);
            let (op, payload) = split_frame(&bytes).unwrap();
            let back = decode_response(op, payload).unwrap();
            prop_assert!(same_bits(&back, &resp), "{:?} vs {:?}", back, resp);
        }

        #[test]
        fn truncated_frames_are_errors_not_panics(req in request(), cut in 0usize..64) {
            let bytes = encode_request(&req);
            let (op, payload) = split_frame(&bytes).unwrap();
            if cut < payload.len() {
                prop_assert!(decode_request(op, &payload[..cut]).is_err());
            }
        }

        #[test]
        fn garbage_never_panics(op in any::<u8>(), payload in prop::collection::vec(any::<u8>(), 0..80)) {
            let _ = decode_request(op, &payload);
            let _ = decode_response(op, &payload);
        }
    }

    #[test]
    fn health_frame_layout() {
        assert_eq!(encode_request(&Request::Health), vec![0, 0, 0, 0, OP_HEALTH]);
        let bytes = encode_request(&Request::GetFeatures { node: NodeRef::key(1, 2) });
        assert_eq!(bytes, vec![10, 0, 0, 0, 0x02, 1, 0, 2, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn decoding_rejects_trailing_and_unknown() {
        assert!(matches!(decode_request(OP_HEALTH, &[1]), Err(WireError::Trailing(1))));
        assert!(matches!(decode_request(0x42, &[]), Err(WireError::UnknownOpcode(0x42))));
        assert!(matches!(decode_response(OP_HEALTH, &[9]), Err(WireError::UnknownStatus(9))));
        assert!(matches!(decode_request(OP_SAMPLE_NEIGHBORS, &[7]), Err(WireError::UnknownStrategy(7))));
        // a count far beyond the payload fails before allocating
        let mut huge = vec![0u8];
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_response(OP_SAMPLE_NEIGHBORS, &huge), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn oversized_frames_are_rejected() {
        let mut bytes = (MAX_FRAME as u32 + 1).to_le_bytes().to_vec();
        bytes.push(OP_HEALTH);
        assert!(matches!(read_frame(&mut bytes.as_slice()), Err(WireError::TooLarge(_))));
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        assert!(read_frame(&mut [1u8, 0].as_slice()).is_err());
    }
}
