use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lignn_core::graph::EdgeView;
use lignn_core::model::{build_trees, Activity, FeatureSource, TreeNode, TreeSpec, TreeStats};
use lignn_core::pipeline::GraphQuery;
use lignn_core::samplers::{
    ppr_forward_push_batch, ppr_two_hop_batch, sample_random_multihop, sample_weighted_multihop, AdjacencySource,
    NeighborSample, PprConfig, SampleError, WalkConfig,
};
use lignn_core::NodeRef;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::PartitionMap;
use crate::wire::{
    decode_response, encode_request, read_frame, AdjacencyRun, Body, HealthInfo, Request, Response, SampleParams, SampleResult, Status, WireError,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, initial_backoff_ms: 100, backoff_multiplier: 2.0, max_backoff_ms: 2000 }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_attempts == 0 {
            return Err(ClientError::Config("max_attempts must be at least 1".into()));
        }
        if self.initial_backoff_ms == 0 || self.max_backoff_ms == 0 {
            return Err(ClientError::Config("backoffs must be positive".into()));
        }
        if !(self.backoff_multiplier >= 1.0 && self.backoff_multiplier.is_finite()) {
            return Err(ClientError::Config(format!("backoff multiplier {} must be >= 1", self.backoff_multiplier)));
        }
        Ok(())
    }

    /// Wait before attempt `k + 2`: `min(initial · multiplier^k, max)`.
    pub fn backoff(&self, k: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.backoff_multiplier.powi(k as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }

    /// Every wait of a call that fails all attempts.
    pub fn schedule(&self) -> Vec<Duration> {
        (0..self.max_attempts.saturating_sub(1)).map(|k| self.backoff(k)).collect()
    }

    pub fn max_total_wait(&self) -> Duration {
        self.schedule().iter().sum()
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("partition {partition} at {addr}: {source}")]
    Transport { partition: usize, addr: SocketAddr, source: io::Error },
    #[error("malformed response from partition {partition}: {source}")]
    Malformed { partition: usize, source: WireError },
    #[error("not owned: {0}")]
    NotOwned(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("server error: {0}")]
    Internal(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ClientError> },
    #[error("{} seeds unavailable ({detail})", missing.len())]
    Partial { missing: Vec<NodeRef>, detail: String },
    #[error("unexpected response: {0}")]
    Unexpected(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ClientError {
    /// Connection refused/reset/aborted and timeouts are retried; anything
    /// the server said explicitly is not.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport { source, .. } => matches!(
                source.kind(),
                io::ErrorKind::ConnectionRefused
                    | io::ErrorKind::ConnectionReset
                    | io::ErrorKind::ConnectionAborted
                    | io::ErrorKind::BrokenPipe
                    | io::ErrorKind::NotConnected
                    | io::ErrorKind::UnexpectedEof
                    | io::ErrorKind::TimedOut
                    | io::ErrorKind::WouldBlock
            ),
            _ => false,
        }
    }

    /// The transport-level error at the root of this error.
    pub fn io_kind(&self) -> Option<io::ErrorKind> {
        match self {
            ClientError::Transport { source, .. } => Some(source.kind()),
            ClientError::Exhausted { last, .. } => last.io_kind(),
            _ => None,
        }
    }
}

fn check(resp: Response) -> Result<Body, ClientError> {
    match resp.status {
        Status::Ok => Ok(resp.body),
        s => {
            let msg = match resp.body {
                Body::Error(m) => m,
                other => format!("{other:?}"),
            };
            Err(match s {
                Status::NotOwned => ClientError::NotOwned(msg),
                Status::BadRequest => ClientError::BadRequest(msg),
                _ => ClientError::Internal(msg),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    pub waited_ms: u64,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Thread-safe client for a partitioned engine. Requests to one partition
/// in one call are pipelined on a single connection.
pub struct EngineClient {
    map: PartitionMap,
    policy: RetryPolicy,
    timeout: Duration,
    idle: Vec<Mutex<Vec<TcpStream>>>,
    sleep: Sleeper,
    calls: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    waited_ms: AtomicU64,
}

/// Requests per frame batch when splitting large adjacency rounds.
const ADJACENCY_CHUNK: usize = 1024;

impl EngineClient {
    pub fn new(map: PartitionMap, policy: RetryPolicy) -> Result<Self, ClientError> {
        policy.validate()?;
        let idle = (0..map.partitions()).map(|_| Mutex::new(Vec::new())).collect();
        Ok(Self {
            map,
            policy,
            timeout: Duration::from_secs(10),
            idle,
            sleep: Arc::new(std::thread::sleep),
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            waited_ms: AtomicU64::new(0),
        })
    }

    /// Connect/read/write timeout per attempt.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Replaces the backoff sleep (tests record waits instead of sleeping).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn map(&self) -> &PartitionMap {
        &self.map
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            calls: self.calls.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            waited_ms: self.waited_ms.load(Ordering::Relaxed),
        }
    }

    fn connection(&self, partition: usize) -> Result<TcpStream, ClientError> {
        if let Some(c) = self.idle[partition].lock().unwrap_or_else(|e| e.into_inner()).pop() {
            return Ok(c);
        }
        let addr = self.map.address(partition);
        let transport = |source| ClientError::Transport { partition, addr, source };
        let c = TcpStream::connect_timeout(&addr, self.timeout).map_err(transport)?;
        c.set_read_timeout(Some(self.timeout)).map_err(transport)?;
        c.set_write_timeout(Some(self.timeout)).map_err(transport)?;
        c.set_nodelay(true).map_err(transport)?;
        Ok(c)
    }

    fn attempt(&self, partition: usize, frames: &[Vec<u8>], opcodes: &[u8]) -> Result<Vec<Response>, ClientError> {
        let addr = self.map.address(partition);
        let transport = |source| ClientError::Transport { partition, addr, source };
        let stream = self.connection(partition)?;
        let result = (|| {
            let mut w = BufWriter::new(stream.try_clone().map_err(transport)?);
            for f in frames {
                w.write_all(f).map_err(transport)?;
            }
            w.flush().map_err(transport)?;
            let mut r = BufReader::new(&stream);
            let mut out = Vec::with_capacity(frames.len());
            for op in opcodes {
                let (got, payload) = match read_frame(&mut r) {
                    Ok(Some(f)) => f,
                    Ok(None) => return Err(transport(io::ErrorKind::UnexpectedEof.into())),
                    Err(WireError::Io(e)) => return Err(transport(e)),
                    Err(e) => return Err(ClientError::Malformed { partition, source: e }),
                };
                let resp = decode_response(got, &payload).map_err(|e| ClientError::Malformed { partition, source: e })?;
                if got != *op {
                    // the server answers garbage with opcode 0; surface its message
                    check(resp)?;
                    return Err(ClientError::Unexpected(format!("opcode {got:#04x} in reply to {op:#04x}")));
                }
                out.push(resp);
            }
            Ok(out)
        })();
        if result.is_ok() {
            self.idle[partition].lock().unwrap_or_else(|e| e.into_inner()).push(stream);
        }
        result
    }

    /// Sends `requests` to one partition (pipelined) with retries.
    pub fn call_partition(&self, partition: usize, requests: &[Request]) -> Result<Vec<Response>, ClientError> {
        if partition >= self.map.partitions() {
            return Err(ClientError::Config(format!("no partition {partition}")));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let frames: Vec<Vec<u8>> = requests.iter().map(encode_request).collect();
        let opcodes: Vec<u8> = requests.iter().map(Request::opcode).collect();
        let mut k = 0u32;
        loop {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            match self.attempt(partition, &frames, &opcodes) {
                Ok(r) => return Ok(r),
                Err(e) if !e.is_retryable() => return Err(e),
                Err(e) if k + 1 >= self.policy.max_attempts => {
                    return Err(ClientError::Exhausted { attempts: k + 1, last: Box::new(e) });
                }
                Err(e) => {
                    let wait = self.policy.backoff(k);
                    debug!("attempt {} to partition {partition} failed ({e}); retrying in {wait:?}", k + 1);
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    self.waited_ms.fetch_add(wait.as_millis() as u64, Ordering::Relaxed);
                    (self.sleep)(wait);
                    k += 1;
                }
            }
        }
    }

    /// Routes one request to the owner of its first node (partition 0 for
    /// requests without nodes) and checks the status.
    pub fn call(&self, request: &Request) -> Result<Body, ClientError> {
        let partition = request.routed_nodes().first().map_or(0, |n| self.map.partition_of(*n));
        let resp = self.call_partition(partition, std::slice::from_ref(request))?.pop().expect("one response");
        check(resp)
    }

    pub fn health(&self, partition: usize) -> Result<HealthInfo, ClientError> {
        match check(self.call_partition(partition, &[Request::Health])?.pop().expect("one response"))? {
            Body::Health(h) => Ok(h),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Splits the positions of `nodes` by owner into chunks, sends one
    /// `make(chunk)` request per chunk (pipelined, partitions in parallel)
    /// and unpacks each response into positioned values.
    fn scatter<T: Send>(
        &self,
        nodes: &[NodeRef],
        chunk: usize,
        make: impl Fn(&[NodeRef]) -> Request + Sync,
        unpack: impl Fn(Response, &[usize]) -> Result<Vec<(usize, T)>, ClientError> + Sync,
    ) -> Vec<Result<Vec<(usize, T)>, (Vec<usize>, ClientError)>> {
        let routed = self.map.route(nodes);
        std::thread::scope(|s| {
            let handles: Vec<_> = routed
                .into_iter()
                .enumerate()
                .filter(|(_, idx)| !idx.is_empty())
                .map(|(p, idx)| {
                    let (make, unpack) = (&make, &unpack);
                    s.spawn(move || {
                        let chunks: Vec<&[usize]> = idx.chunks(chunk.max(1)).collect();
                        let requests: Vec<Request> =
                            chunks.iter().map(|c| make(&c.iter().map(|i| nodes[*i]).collect::<Vec<_>>())).collect();
                        let resps = self.call_partition(p, &requests).map_err(|e| (idx.clone(), e))?;
                        let mut out = Vec::with_capacity(idx.len());
                        for (c, resp) in chunks.iter().zip(resps) {
                            out.extend(unpack(resp, c).map_err(|e| (idx.clone(), e))?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client worker panicked")).collect()
        })
    }

    /// Adjacency of `nodes` (one pipelined request stream per partition).
    pub fn adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<AdjacencyRun, SampleError>> {
        let mut out: Vec<Option<Result<AdjacencyRun, SampleError>>> = vec![None; nodes.len()];
        let parts = self.scatter(
            nodes,
            ADJACENCY_CHUNK,
            |sub| Request::Adjacency { nodes: sub.to_vec() },
            |resp, idx| match check(resp)? {
                Body::Adjacency(list) if list.len() == idx.len() => Ok(idx.iter().copied().zip(list).collect()),
                other => Err(ClientError::Unexpected(format!("adjacency reply {other:?}"))),
            },
        );
        for part in parts {
            match part {
                Ok(items) => {
                    for (i, r) in items {
                        // the only per-node failure an owner reports is an unknown node
                        out[i] = Some(r.map_err(|_| SampleError::UnknownNode(nodes[i])));
                    }
                }
                Err((idx, e)) => {
                    warn!("adjacency for {} nodes failed: {e}", idx.len());
                    for i in idx {
                        out[i] = Some(Err(SampleError::Unavailable { node: nodes[i], detail: e.to_string() }));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("every position answered")).collect()
    }

    /// Features of `nodes`; requests are pipelined per partition. Errors
    /// (including unknown nodes) yield `None`.
    pub fn features(&self, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; nodes.len()];
        let parts = self.scatter(
            nodes,
            1,
            |sub| Request::GetFeatures { node: sub[0] },
            |resp, idx| match check(resp) {
                Ok(Body::Features(f)) => Ok(vec![(idx[0], f)]),
                // unknown node
                Err(ClientError::BadRequest(_)) => Ok(vec![(idx[0], None)]),
                Ok(other) => Err(ClientError::Unexpected(format!("features reply {other:?}"))),
                Err(e) => Err(e),
            },
        );
        for part in parts {
            match part {
                Ok(items) => items.into_iter().for_each(|(i, f)| out[i] = f),
                Err((idx, e)) => warn!("features for {} nodes failed: {e}", idx.len()),
            }
        }
        out
    }

    /// Dense indices for `nodes`, from their owners.
    pub fn resolve(&self, nodes: &[NodeRef]) -> Vec<Result<NodeRef, SampleError>> {
        self.adjacency(nodes).into_iter().map(|r| r.map(|run| run.node)).collect()
    }

    pub fn temporal_last_n(
        &self,
        node: NodeRef,
        edge_type: u16,
        before_ts: i64,
        n: u32,
    ) -> Result<Vec<(NodeRef, i64)>, ClientError> {
        match self.call(&Request::TemporalLastN { node, edge_type, before_ts, n })? {
            Body::Temporal(events) => Ok(events),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }
}

/// Samples around `seeds` across all partitions; results are in input
/// order.
///
/// One-hop strategies are routed to each seed's owner as SampleNeighbors
/// requests. Multi-hop and PPR strategies run here, fetching every round's
/// frontier from its owners, so the rng keying by node (not by shard) makes
/// the result independent of the partition count. Per-seed sampler errors
/// are returned in place; a seed that could not be served because a shard
/// is down fails the whole call with [`ClientError::Partial`].
pub fn fan_out_sample(
    client: &EngineClient,
    seeds: &[NodeRef],
    params: &SampleParams,
) -> Result<Vec<SampleResult>, ClientError> {
    let one_hop = match params {
        SampleParams::Random { fanouts, .. } | SampleParams::Weighted { fanouts, .. } => fanouts.len() == 1,
        SampleParams::Temporal { .. } => true,
        SampleParams::PprPush { .. } | SampleParams::PprTwoHop { .. } => false,
    };
    if one_hop {
        return routed_sample(client, seeds, params);
    }
    let results: Vec<Result<Vec<NeighborSample>, SampleError>> = match params {
        SampleParams::Random { fanouts, rng_seed } => sample_random_multihop(client, seeds, &widen(fanouts), *rng_seed),
        SampleParams::Weighted { fanouts, multipliers, rng_seed } => {
            sample_weighted_multihop(client, seeds, &widen(fanouts), multipliers, *rng_seed)
        }
        SampleParams::PprPush { alpha, r_max, top_k } => {
            let cfg = PprConfig { alpha: *alpha, r_max: *r_max, top_k: *top_k as usize, ..PprConfig::default() };
            ppr_forward_push_batch(client, seeds, &cfg).into_iter().map(|r| r.map(|p| vec![p.sample])).collect()
        }
        SampleParams::PprTwoHop { alpha, walks, top_k, rng_seed } => {
            let cfg = WalkConfig {
                alpha: *alpha,
                num_walks: *walks as usize,
                top_k: *top_k as usize,
                rng_seed: *rng_seed,
                ..WalkConfig::default()
            };
            ppr_two_hop_batch(client, seeds, &cfg).into_iter().map(|r| r.map(|w| vec![w.sample])).collect()
        }
        SampleParams::Temporal { .. } => unreachable!("temporal sampling is one hop"),
    };
    let mut missing = Vec::new();
    let mut detail = String::new();
    for (seed, r) in seeds.iter().zip(&results) {
        if let Err(SampleError::Unavailable { detail: d, .. }) = r {
            if detail.is_empty() {
                detail = d.clone();
            }
            missing.push(*seed);
        }
    }
    if !missing.is_empty() {
        return Err(ClientError::Partial { missing, detail });
    }
    Ok(results.into_iter().map(|r| r.map_err(|e| e.to_string())).collect())
}

fn widen(fanouts: &[u32]) -> Vec<usize> {
    fanouts.iter().map(|f| *f as usize).collect()
}

fn routed_sample(client: &EngineClient, seeds: &[NodeRef], params: &SampleParams) -> Result<Vec<SampleResult>, ClientError> {
    let mut out: Vec<Option<SampleResult>> = vec![None; seeds.len()];
    let parts = client.scatter(
        seeds,
        1,
        |sub| Request::SampleNeighbors { seed: sub[0], params: params.clone() },
        |resp, idx| match check(resp)? {
            Body::Samples(mut list) if list.len() == 1 => Ok(vec![(idx[0], list.pop().expect("one result"))]),
            other => Err(ClientError::Unexpected(format!("sample reply {other:?}"))),
        },
    );
    let mut missing = Vec::new();
    let mut detail = String::new();
    for part in parts {
        match part {
            Ok(items) => items.into_iter().for_each(|(i, r)| out[i] = Some(r)),
            Err((idx, e)) => {
                if !e.is_retryable() && !matches!(e, ClientError::Exhausted { .. }) {
                    return Err(e);
                }
                if detail.is_empty() {
                    detail = e.to_string();
                }
                missing.extend(idx);
            }
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(ClientError::Partial { missing: missing.into_iter().map(|i| seeds[i]).collect(), detail });
    }
    Ok(out.into_iter().map(|r| r.expect("every seed answered")).collect())
}

impl AdjacencySource for EngineClient {
    fn fetch_adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<Vec<EdgeView>, SampleError>> {
        self.adjacency(nodes).into_iter().map(|r| r.map(|run| run.edges)).collect()
    }
}

impl FeatureSource for EngineClient {
    fn fetch_features(&self, nodes: &[NodeRef]) -> Vec<Option<Vec<f64>>> {
        self.features(nodes)
    }
}

impl GraphQuery for EngineClient {
    fn trees(&self, roots: &[NodeRef], spec: &TreeSpec) -> (Vec<Result<TreeNode, SampleError>>, TreeStats) {
        // the encoder needs dense indices; unknown roots pass through and fail in the builder
        let resolved: Vec<NodeRef> =
            self.resolve(roots).into_iter().zip(roots).map(|(r, root)| r.unwrap_or(*root)).collect();
        build_trees(self, &resolved, spec)
    }

    fn activities(&self, member: NodeRef, edge_type: u16, before_ts: i64, n: usize) -> Result<Vec<Activity>, SampleError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let n = u32::try_from(n).unwrap_or(u32::MAX);
        let events = self
            .temporal_last_n(member, edge_type, before_ts, n)
            .map_err(|e| SampleError::Unavailable { node: member, detail: e.to_string() })?;
        let nodes: Vec<NodeRef> = events.iter().map(|(n, _)| *n).collect();
        let resolved = self.resolve(&nodes);
        let features = self.features(&nodes);
        Ok(events
            .into_iter()
            .zip(resolved)
            .zip(features)
            .map(|(((node, timestamp), r), features)| Activity { node: r.unwrap_or(node), features, timestamp })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let p = RetryPolicy::default();
        let ms: Vec<u128> = p.schedule().iter().map(Duration::as_millis).collect();
        assert_eq!(ms, vec![100, 200, 400, 800]);
        assert!(p.schedule().iter().all(|d| *d < Duration::from_millis(p.max_backoff_ms)));
        assert_eq!(p.max_total_wait(), Duration::from_millis(1500));
    }

    #[test]
    fn schedule_caps_and_is_monotone() {
        let p = RetryPolicy { max_attempts: 10, initial_backoff_ms: 300, backoff_multiplier: 3.0, max_backoff_ms: 5000 };
        let ms: Vec<u128> = p.schedule().iter().map(Duration::as_millis).collect();
        assert_eq!(ms, vec![300, 900, 2700, 5000, 5000, 5000, 5000, 5000, 5000]);
        assert!(ms.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn invalid_policies() {
        for p in [
            RetryPolicy { max_attempts: 0, ..RetryPolicy::default() },
            RetryPolicy { initial_backoff_ms: 0, ..RetryPolicy::default() },
            RetryPolicy { backoff_multiplier: 0.5, ..RetryPolicy::default() },
            RetryPolicy { backoff_multiplier: f64::NAN, ..RetryPolicy::default() },
        ] {
            assert!(p.validate().is_err());
        }
        assert_eq!(RetryPolicy { max_attempts: 1, ..RetryPolicy::default() }.schedule(), Vec::<Duration>::new());
    }

    #[test]
    fn retryable_classes() {
        let addr: SocketAddr = "127.0.0.1:1".parse().unwrap();
        let t = |k: io::ErrorKind| ClientError::Transport { partition: 0, addr, source: k.into() };
        assert!(t(io::ErrorKind::ConnectionRefused).is_retryable());
        assert!(t(io::ErrorKind::ConnectionReset).is_retryable());
        assert!(t(io::ErrorKind::TimedOut).is_retryable());
        assert!(!t(io::ErrorKind::PermissionDenied).is_retryable());
        assert!(!ClientError::NotOwned("x".into()).is_retryable());
        assert!(!ClientError::Malformed { partition: 0, source: WireError::Trailing(1) }.is_retryable());
    }
}
