use std::net::SocketAddr;

use lignn_core::rng::mix64;
use lignn_core::NodeRef;
use serde::{Deserialize, Serialize};

use crate::EngineError;

/// Partition hash of a node: two rounds of the splitmix64 finalizer,
/// `mix64(mix64(node_type) ^ node_id)`. Clients and servers must agree on it
/// bit for bit.
pub fn partition_hash(node_type: u16, node_id: u64) -> u64 {
    mix64(mix64(u64::from(node_type)) ^ node_id)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMap {
    pub addresses: Vec<SocketAddr>,
}

impl PartitionMap {
    pub fn new(addresses: Vec<SocketAddr>) -> Result<Self, EngineError> {
        if addresses.is_empty() {
            return Err(EngineError::Config("a partition map needs at least one instance".into()));
        }
        Ok(Self { addresses })
    }

    pub fn partitions(&self) -> usize {
        self.addresses.len()
    }

    pub fn partition_of(&self, node: NodeRef) -> usize {
        partition_of(node, self.partitions())
    }

    pub fn address(&self, partition: usize) -> SocketAddr {
        self.addresses[partition]
    }

    /// Splits `nodes` by owner: for each partition the positions (into
    /// `nodes`) it serves, in input order.
    pub fn route(&self, nodes: &[NodeRef]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.partitions()];
        for (i, n) in nodes.iter().enumerate() {
            out[self.partition_of(*n)].push(i);
        }
        out
    }
}

pub fn partition_of(node: NodeRef, partitions: usize) -> usize {
    (partition_hash(node.node_type, node.node_id) % partitions as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_pinned() {
        // changing the mixing function would silently misroute requests
        // between old clients and new servers
        assert_eq!(partition_hash(0, 0), mix64(mix64(0)));
        assert_eq!(partition_hash(3, 17), mix64(mix64(3) ^ 17));
        assert_eq!(mix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn every_node_has_one_owner_and_load_is_spread() {
        let map = PartitionMap::new((0..4).map(|p| SocketAddr::from(([127, 0, 0, 1], 9000 + p))).collect()).unwrap();
        let nodes: Vec<NodeRef> = (0..4000).map(|i| NodeRef::key((i % 2) as u16, i)).collect();
        let routed = map.route(&nodes);
        let mut seen: Vec<usize> = routed.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..4000).collect::<Vec<_>>());
        for (p, idx) in routed.iter().enumerate() {
            assert!(idx.len() > 800 && idx.len() < 1200, "partition {p}: {}", idx.len());
            assert!(idx.iter().all(|i| map.partition_of(nodes[*i]) == p));
        }
        assert!(PartitionMap::new(Vec::new()).is_err());
    }
}
