use std::sync::{Arc, RwLock};

use lignn_core::HeteroGraph;

/// Indirection slot holding the current immutable graph. Readers take an
/// `Arc` (their epoch) and keep using it while a writer swaps in the next
/// version.
#[derive(Debug)]
pub struct EpochGraph {
    slot: RwLock<(u64, Arc<HeteroGraph>)>,
}

impl EpochGraph {
    pub fn new(graph: HeteroGraph) -> Self {
        Self { slot: RwLock::new((0, Arc::new(graph))) }
    }

    pub fn load(&self) -> Arc<HeteroGraph> {
        Arc::clone(&self.slot.read().unwrap_or_else(|e| e.into_inner()).1)
    }

    pub fn epoch(&self) -> u64 {
        self.slot.read().unwrap_or_else(|e| e.into_inner()).0
    }

    /// Installs `next` and returns the new epoch number.
    pub fn swap(&self, next: HeteroGraph) -> u64 {
        let mut slot = self.slot.write().unwrap_or_else(|e| e.into_inner());
        slot.0 += 1;
        slot.1 = Arc::new(next);
        slot.0
    }

    /// Applies `f` to the current graph and installs the result; the write
    /// lock is held throughout so concurrent updates are not lost.
    pub fn update<E>(&self, f: impl FnOnce(&HeteroGraph) -> Result<HeteroGraph, E>) -> Result<u64, E> {
        let mut slot = self.slot.write().unwrap_or_else(|e| e.into_inner());
        let next = f(&slot.1)?;
        slot.0 += 1;
        slot.1 = Arc::new(next);
        Ok(slot.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lignn_core::graph::{EdgeRow, EdgeView, GraphBuilder};
    use lignn_core::{EdgeKind, NodeRef, Schema};

    const ENGAGE: u16 = 1;

    #[test]
    fn readers_keep_their_epoch() {
        let mut b = GraphBuilder::new(Schema::new().with_edge_type(ENGAGE, EdgeKind::Engagement));
        for id in 0..3 {
            b.add_node(0, id, vec![]);
        }
        b.add_edge(EdgeRow { src_type: 0, src_id: 0, edge_type: ENGAGE, dst_type: 0, dst_id: 1, weight: 1.0, timestamp: 5 });
        let g = b.finish().0;
        let slot = EpochGraph::new(g);
        let before = slot.load();
        let n0 = before.resolve(0, 0).unwrap();
        let n2 = before.resolve(0, 2).unwrap();
        let e = slot.update(|g| g.with_edge_upserted(n0, ENGAGE, n2, 1.0, 9)).unwrap();
        assert_eq!(e, 1);
        assert_eq!(before.out_edges_all(n0).unwrap().len(), 1);
        let after: Vec<EdgeView> = slot.load().out_edges_all(n0).unwrap();
        assert_eq!(after.len(), 2);
        assert_eq!(after[1].node, NodeRef::key(0, 2));
        assert!(slot.update(|g| g.with_edge_upserted(NodeRef::key(0, 99), ENGAGE, n2, 1.0, 9)).is_err());
        assert_eq!(slot.epoch(), 1);
    }
}
