use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use lignn_core::graph::EdgeView;
use lignn_core::samplers::{
    ppr_forward_push, ppr_forward_push_batch, ppr_two_hop_random_walk, sample_random_multihop,
    sample_temporal_last_n, sample_weighted_multihop, AdjacencySource, NeighborSample, PprConfig, SampleEntry,
    SampleError, Strategy, WalkConfig,
};
use lignn_core::{HeteroGraph, NodeRef};
use log::{debug, info, warn};

use crate::epoch::EpochGraph;
use crate::partition::{partition_of, PartitionMap};
use crate::wire::{
    decode_request, encode_response, read_frame, AdjacencyRun, Body, HealthInfo, Request, Response, SampleParams,
    Status,
};
use crate::EngineError;

/// Request handling for one partition, independent of the transport.
#[derive(Debug)]
pub struct ShardState {
    graph: Arc<EpochGraph>,
    partition: usize,
    partitions: usize,
    requests: AtomicU64,
}

/// Adjacency restricted to the nodes this shard owns.
struct Owned<'a> {
    graph: &'a HeteroGraph,
    state: &'a ShardState,
}

impl AdjacencySource for Owned<'_> {
    fn fetch_adjacency(&self, nodes: &[NodeRef]) -> Vec<Result<Vec<EdgeView>, SampleError>> {
        nodes
            .iter()
            .map(|n| {
                if !self.state.owns(*n) {
                    return Err(SampleError::Unavailable {
                        node: *n,
                        detail: format!("owned by partition {}", partition_of(*n, self.state.partitions)),
                    });
                }
                self.graph.out_edges_all(*n).map_err(SampleError::from)
            })
            .collect()
    }
}

fn usize_fanouts(f: &[u32]) -> Vec<usize> {
    f.iter().map(|x| *x as usize).collect()
}

impl ShardState {
    /// Checks that `graph` holds adjacency only for nodes this partition
    /// owns.
    pub fn new(graph: Arc<EpochGraph>, partition: usize, partitions: usize) -> Result<Self, EngineError> {
        if partitions == 0 || partition >= partitions {
            return Err(EngineError::Config(format!("partition {partition} of {partitions}")));
        }
        let g = graph.load();
        if let Some(n) = g.all_nodes().find(|n| {
            partition_of(*n, partitions) != partition && g.out_degree_all(*n).map_or(false, |d| d > 0)
        }) {
            return Err(EngineError::Config(format!(
                "graph is not the shard of partition {partition}: {n} belongs to partition {}",
                partition_of(n, partitions)
            )));
        }
        Ok(Self { graph, partition, partitions, requests: AtomicU64::new(0) })
    }

    pub fn owns(&self, node: NodeRef) -> bool {
        partition_of(node, self.partitions) == self.partition
    }

    pub fn graph(&self) -> &Arc<EpochGraph> {
        &self.graph
    }

    pub fn requests_served(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn health(&self) -> HealthInfo {
        let g = self.graph.load();
        let widen = |m: std::collections::BTreeMap<u16, usize>| m.into_iter().map(|(k, v)| (k, v as u64)).collect();
        HealthInfo {
            partition: self.partition as u32,
            partitions: self.partitions as u32,
            epoch: self.graph.epoch(),
            node_counts: widen(g.node_counts()),
            edge_counts: widen(g.edge_counts()),
        }
    }

    pub fn handle(&self, req: &Request) -> Response {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let op = req.opcode();
        let foreign: Vec<String> = req.routed_nodes().into_iter().filter(|n| !self.owns(*n)).map(|n| n.to_string()).collect();
        if !foreign.is_empty() {
            return Response::error(
                op,
                Status::NotOwned,
                format!("partition {} does not own {}", self.partition, foreign.join(", ")),
            );
        }
        let graph = self.graph.load();
        let src = Owned { graph: &graph, state: self };
        let one = |r: Result<Vec<NeighborSample>, SampleError>| Body::Samples(vec![r.map_err(|e| e.to_string())]);
        let body = match req {
            Request::Health => Body::Health(self.health()),
            Request::SampleNeighbors { seed, params } => match params {
                SampleParams::Random { fanouts, rng_seed } => one(
                    sample_random_multihop(&src, &[*seed], &usize_fanouts(fanouts), *rng_seed).pop().expect("one seed"),
                ),
                SampleParams::Weighted { fanouts, multipliers, rng_seed } => one(
                    sample_weighted_multihop(&src, &[*seed], &usize_fanouts(fanouts), multipliers, *rng_seed)
                        .pop()
                        .expect("one seed"),
                ),
                SampleParams::PprPush { alpha, r_max, top_k } => {
                    let cfg = PprConfig { alpha: *alpha, r_max: *r_max, top_k: *top_k as usize, ..PprConfig::default() };
                    one(ppr_forward_push(&src, *seed, &cfg).map(|r| vec![r.sample]))
                }
                SampleParams::PprTwoHop { alpha, walks, top_k, rng_seed } => {
                    let cfg = walk_config(*alpha, *walks, *top_k, *rng_seed);
                    one(ppr_two_hop_random_walk(&src, *seed, &cfg).map(|r| vec![r.sample]))
                }
                SampleParams::Temporal { edge_type, before_ts, n } => {
                    one(sample_temporal_last_n(&graph, *seed, *edge_type, *before_ts, *n as usize).map(|events| {
                        let mut s = NeighborSample::new(*seed, Strategy::Temporal);
                        s.entries = events.into_iter().map(|(node, _)| SampleEntry { node, score: 1.0, hop: 1 }).collect();
                        vec![s]
                    }))
                }
            },
            Request::PprTwoHop { node, alpha, walks, top_k, rng_seed } => {
                let cfg = walk_config(*alpha, *walks, *top_k, *rng_seed);
                one(ppr_two_hop_random_walk(&src, *node, &cfg).map(|r| vec![r.sample]))
            }
            Request::PprPushBatch { seeds, alpha, r_max, top_k } => {
                let cfg = PprConfig { alpha: *alpha, r_max: *r_max, top_k: *top_k as usize, ..PprConfig::default() };
                Body::Samples(
                    ppr_forward_push_batch(&src, seeds, &cfg)
                        .into_iter()
                        .map(|r| r.map(|p| vec![p.sample]).map_err(|e| e.to_string()))
                        .collect(),
                )
            }
            Request::GetFeatures { node } => {
                if !graph.contains(*node) {
                    return Response::error(op, Status::BadRequest, format!("unknown node {node}"));
                }
                Body::Features(graph.features(*node).map(|f| f.to_vec()))
            }
            Request::TemporalLastN { node, edge_type, before_ts, n } => {
                match sample_temporal_last_n(&graph, *node, *edge_type, *before_ts, *n as usize) {
                    Ok(events) => Body::Temporal(events),
                    Err(e) => return Response::error(op, Status::BadRequest, e.to_string()),
                }
            }
            Request::Adjacency { nodes } => Body::Adjacency(
                nodes
                    .iter()
                    .map(|n| {
                        let node = graph.resolve_ref(*n).map_err(|e| e.to_string())?;
                        let edges = graph.out_edges_all(node).map_err(|e| e.to_string())?;
                        Ok(AdjacencyRun { node, edges })
                    })
                    .collect(),
            ),
        };
        Response::ok(op, body)
    }

    /// Decodes a request frame and encodes the response frame.
    pub fn handle_frame(&self, opcode: u8, payload: &[u8]) -> Vec<u8> {
        let resp = match decode_request(opcode, payload) {
            Ok(req) => {
                // a panic in a sampler must not take the connection down
                match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| self.handle(&req))) {
                    Ok(r) => r,
                    Err(_) => Response::error(opcode, Status::Internal, "request handler panicked"),
                }
            }
            Err(e) => Response::error(opcode, Status::BadRequest, e.to_string()),
        };
        encode_response(&resp)
    }

    /// Serves frames on `stream` until the peer closes it.
    pub fn serve_connection(&self, stream: TcpStream) -> std::io::Result<()> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        loop {
            match read_frame(&mut reader) {
                Ok(Some((op, payload))) => {
                    writer.write_all(&self.handle_frame(op, &payload))?;
                    // flush once the client has no further pipelined frames
                    if reader.buffer().is_empty() {
                        writer.flush()?;
                    }
                }
                Ok(None) => return Ok(()),
                Err(crate::wire::WireError::Io(e)) => return Err(e),
                Err(e) => {
                    // the stream is out of sync; answer once and hang up
                    let resp = Response::error(0, Status::BadRequest, e.to_string());
                    writer.write_all(&encode_response(&resp))?;
                    writer.flush()?;
                    return Ok(());
                }
            }
        }
    }
}

fn walk_config(alpha: f64, walks: u32, top_k: u32, rng_seed: u64) -> WalkConfig {
    WalkConfig { num_walks: walks as usize, alpha, top_k: top_k as usize, rng_seed, ..WalkConfig::default() }
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<ShardState>,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &Arc<ShardState> {
        &self.state
    }

    /// Stops accepting, closes open connections and joins the acceptor.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, c) in self.connections.lock().unwrap_or_else(|e| e.into_inner()).drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        info!("server on {} stopped", self.addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `bind` and serves `state` with one thread per connection.
pub fn serve(state: ShardState, bind: &str) -> Result<ServerHandle, EngineError> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let state = Arc::new(state);
    let stop = Arc::new(AtomicBool::new(false));
    let connections: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
    let accept = {
        let (state, stop, connections) = (Arc::clone(&state), Arc::clone(&stop), Arc::clone(&connections));
        std::thread::Builder::new().name(format!("engine-accept-{}", state.partition)).spawn(move || {
            for (id, conn) in (0u64..).zip(listener.incoming()) {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                if let Ok(c) = stream.try_clone() {
                    connections.lock().unwrap_or_else(|e| e.into_inner()).insert(id, c);
                }
                let (state, connections) = (Arc::clone(&state), Arc::clone(&connections));
                let spawned = std::thread::Builder::new().name("engine-conn".into()).spawn(move || {
                    if let Err(e) = state.serve_connection(stream) {
                        debug!("connection closed: {e}");
                    }
                    connections.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
                });
                if let Err(e) = spawned {
                    warn!("could not spawn connection thread: {e}");
                }
            }
        })?
    };
    info!("partition {} of {} listening on {addr}", state.partition, state.partitions);
    Ok(ServerHandle { addr, state, stop, connections, accept: Some(accept) })
}

/// Shards `graph` into `partitions` servers on loopback ports and returns
/// them with the matching partition map.
pub fn spawn_local_cluster(graph: &HeteroGraph, partitions: usize) -> Result<(Vec<ServerHandle>, PartitionMap), EngineError> {
    let mut servers = Vec::with_capacity(partitions);
    for p in 0..partitions {
        let shard = if partitions == 1 { graph.clone() } else { graph.shard(|n| partition_of(n, partitions) == p) };
        let state = ShardState::new(Arc::new(EpochGraph::new(shard)), p, partitions)?;
        servers.push(serve(state, "127.0.0.1:0")?);
    }
    let map = PartitionMap::new(servers.iter().map(|s| s.addr()).collect())?;
    Ok((servers, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{decode_response, encode_request, split_frame, OP_HEALTH};
    use lignn_core::synthetic::random_weighted_graph;
    use std::io::Read;

    fn state(g: &HeteroGraph, p: usize, parts: usize) -> ShardState {
        let shard = g.shard(|n| partition_of(n, parts) == p);
        ShardState::new(Arc::new(EpochGraph::new(shard)), p, parts).unwrap()
    }

    #[test]
    fn foreign_nodes_are_not_owned() {
        let g = random_weighted_graph(60, 4, 1, true);
        let s = state(&g, 1, 3);
        let foreign = g.all_nodes().find(|n| !s.owns(*n)).unwrap();
        let owned = g.all_nodes().find(|n| s.owns(*n)).unwrap();
        let r = s.handle(&Request::GetFeatures { node: foreign });
        assert_eq!(r.status, Status::NotOwned);
        let r = s.handle(&Request::Adjacency { nodes: vec![owned, foreign] });
        assert_eq!(r.status, Status::NotOwned);
        let r = s.handle(&Request::Adjacency { nodes: vec![owned] });
        assert_eq!(r.status, Status::Ok);
    }

    #[test]
    fn unsharded_graph_is_rejected_for_a_partition() {
        let g = random_weighted_graph(60, 4, 1, true);
        assert!(ShardState::new(Arc::new(EpochGraph::new(g.clone())), 0, 2).is_err());
        assert!(ShardState::new(Arc::new(EpochGraph::new(g)), 2, 2).is_err());
    }

    #[test]
    fn sampling_matches_the_in_process_call_byte_for_byte() {
        let g = random_weighted_graph(80, 5, 2, true);
        let s = ShardState::new(Arc::new(EpochGraph::new(g.clone())), 0, 1).unwrap();
        for seed in g.all_nodes().take(10) {
            let req = Request::SampleNeighbors { seed, params: SampleParams::Random { fanouts: vec![4, 3], rng_seed: 7 } };
            let bytes = encode_request(&req);
            let (op, payload) = split_frame(&bytes).unwrap();
            let served = s.handle_frame(op, payload);
            let direct = sample_random_multihop(&g, &[seed], &[4, 3], 7).pop().unwrap().map_err(|e| e.to_string());
            assert_eq!(served, encode_response(&Response::ok(op, Body::Samples(vec![direct]))));
        }
    }

    #[test]
    fn health_over_tcp_and_garbage_handling() {
        let g = random_weighted_graph(30, 3, 3, false);
        let mut h = serve(ShardState::new(Arc::new(EpochGraph::new(g.clone())), 0, 1).unwrap(), "127.0.0.1:0").unwrap();
        let mut c = TcpStream::connect(h.addr()).unwrap();
        c.write_all(&encode_request(&Request::Health)).unwrap();
        let (op, payload) = read_frame(&mut c).unwrap().unwrap();
        let resp = decode_response(op, &payload).unwrap();
        assert_eq!(op, OP_HEALTH);
        let Body::Health(info) = resp.body else { panic!("{resp:?}") };
        assert_eq!(info.node_counts.values().sum::<u64>(), g.total_node_count() as u64);
        assert_eq!(info.edge_counts.values().sum::<u64>(), g.edge_count() as u64);

        // an unknown opcode gets BAD_REQUEST and the connection stays usable
        c.write_all(&[0, 0, 0, 0, 0x55]).unwrap();
        let (_, payload) = read_frame(&mut c).unwrap().unwrap();
        assert_eq!(payload[0], Status::BadRequest as u8);
        c.write_all(&encode_request(&Request::Health)).unwrap();
        assert!(read_frame(&mut c).unwrap().is_some());

        h.shutdown();
        let mut buf = [0u8; 1];
        assert!(matches!(c.read(&mut buf), Ok(0) | Err(_)));
        assert!(TcpStream::connect(h.addr()).and_then(|mut s| s.read(&mut buf)).map_or(true, |n| n == 0));
    }
}
