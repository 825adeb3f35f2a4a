use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::{Arc, RwLock};

use lignn_core::NodeRef;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub vector: Vec<f64>,
    pub version: u64,
    pub updated_at: i64,
}

/// Node embeddings with per-node versions. Entries are immutable and
/// replaced whole, so a reader holding an `Arc<Entry>` never sees a
/// partially written vector.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    entries: RwLock<BTreeMap<NodeRef, Arc<Entry>>>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes `vector` for `node` and returns its new version (1 for a
    /// first write).
    pub fn put(&self, node: NodeRef, vector: Vec<f64>, updated_at: i64) -> u64 {
        let key = NodeRef::key(node.node_type, node.node_id);
        let mut map = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let version = map.get(&key).map_or(0, |e| e.version) + 1;
        map.insert(key, Arc::new(Entry { vector, version, updated_at }));
        version
    }

    pub fn get(&self, node: NodeRef) -> Option<Arc<Entry>> {
        let key = NodeRef::key(node.node_type, node.node_id);
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(&key).cloned()
    }

    pub fn version(&self, node: NodeRef) -> u64 {
        self.get(node).map_or(0, |e| e.version)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point-in-time view of every entry.
    pub fn snapshot(&self) -> BTreeMap<NodeRef, Arc<Entry>> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// `node_type<TAB>node_id<TAB>version<TAB>e1,e2,…`, sorted by node.
    /// Floats use the shortest representation that parses back exactly.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (node, e) in self.snapshot() {
            write!(out, "{}\t{}\t{}\t", node.node_type, node.node_id, e.version)?;
            for (i, x) in e.vector.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "{x}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("dump is ascii")
    }

    /// Rebuilds a store from a dump; `updated_at` is not part of the
    /// format and is set to 0.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let map = parse_dump(reader)?
            .into_iter()
            .map(|(n, (version, vector))| (n, Arc::new(Entry { vector, version, updated_at: 0 })))
            .collect();
        Ok(Self { entries: RwLock::new(map) })
    }
}

pub fn parse_dump<R: BufRead>(reader: R) -> Result<BTreeMap<NodeRef, (u64, Vec<f64>)>, StoreError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| StoreError::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        let [t, id, version, values] = cols[..] else {
            return Err(err(format!("expected 4 columns, got {}", cols.len())));
        };
        let t: u16 = t.parse().map_err(|e| err(format!("node type {t:?}: {e}")))?;
        let id: u64 = id.parse().map_err(|e| err(format!("node id {id:?}: {e}")))?;
        let version: u64 = version.parse().map_err(|e| err(format!("version {version:?}: {e}")))?;
        let vector = if values.is_empty() {
            Vec::new()
        } else {
            values
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("value {v:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?
        };
        if out.insert(NodeRef::key(t, id), (version, vector)).is_some() {
            return Err(err(format!("duplicate node {t}:{id}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    #[test]
    fn versions_increase_per_node() {
        let s = EmbeddingStore::new();
        let a = NodeRef::key(0, 1);
        assert_eq!(s.version(a), 0);
        assert_eq!(s.put(a, vec![1.0], 10), 1);
        assert_eq!(s.put(NodeRef::new(0, 1, 7), vec![2.0], 11), 2);
        assert_eq!(s.put(NodeRef::key(1, 1), vec![3.0], 12), 1);
        assert_eq!(s.get(a).unwrap().vector, vec![2.0]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn dump_round_trips_exactly() {
        let s = EmbeddingStore::new();
        s.put(NodeRef::key(1, 5), vec![0.1, -1e-300, 1.0 / 3.0], 0);
        s.put(NodeRef::key(0, 9), vec![], 0);
        s.put(NodeRef::key(0, 2), vec![f64::MAX, 2.5], 0);
        s.put(NodeRef::key(0, 2), vec![f64::MIN_POSITIVE, 2.5], 0);
        let text = s.dump_string();
        assert_eq!(text.lines().next().unwrap(), format!("0\t2\t2\t{},2.5", f64::MIN_POSITIVE));
        let back = EmbeddingStore::load(text.as_bytes()).unwrap();
        assert_eq!(back.dump_string(), text);
        assert_eq!(back.get(NodeRef::key(1, 5)).unwrap().vector, vec![0.1, -1e-300, 1.0 / 3.0]);
    }

    #[test]
    fn malformed_dumps_are_rejected() {
        for bad in ["0\t1\t1", "x\t1\t1\t0.5", "0\t1\t1\t0.5,abc", "0\t1\t1\t1\n0\t1\t2\t1"] {
            assert!(parse_dump(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn readers_never_see_torn_vectors() {
        let store = EmbeddingStore::new();
        let node = NodeRef::key(0, 0);
        store.put(node, vec![0.0; 256], 0);
        let done = AtomicBool::new(false);
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    let mut last = 0;
                    while !done.load(Ordering::Relaxed) {
                        let e = store.get(node).unwrap();
                        let first = e.vector[0];
                        assert!(e.vector.iter().all(|x| *x == first), "torn read");
                        assert_eq!(first as u64 + 1, e.version);
                        assert!(e.version >= last);
                        last = e.version;
                        for (_, e) in store.snapshot() {
                            assert!(e.vector.iter().all(|x| *x == e.vector[0]));
                        }
                    }
                });
            }
            for v in 1..5000u64 {
                store.put(node, vec![v as f64; 256], v as i64);
            }
            done.store(true, Ordering::Relaxed);
        });
        assert_eq!(store.version(node), 5000);
    }
}
