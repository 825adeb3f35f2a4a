use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchConfig {
    pub capacity: usize,
    pub producers: usize,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self { capacity: 10, producers: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PrefetchStats {
    pub produced: usize,
    pub delivered: usize,
    /// Largest queue length observed after an enqueue.
    pub max_depth: usize,
}

struct State<T> {
    queue: VecDeque<T>,
    live_producers: usize,
    error: Option<PipelineError>,
    closed: bool,
    stats: PrefetchStats,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    not_full: Condvar,
    not_empty: Condvar,
    capacity: usize,
}

impl<T> Shared<T> {
    fn lock(&self) -> MutexGuard<'_, State<T>> {
        // a panicking producer is reported through its guard; the data is
        // still consistent
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Decrements the live-producer count when a producer exits, however it
/// exits.
struct ProducerGuard<T> {
    shared: Arc<Shared<T>>,
    shard: usize,
}

impl<T> Drop for ProducerGuard<T> {
    fn drop(&mut self) {
        let mut st = self.shared.lock();
        st.live_producers -= 1;
        if std::thread::panicking() && st.error.is_none() {
            st.error = Some(PipelineError::Producer { shard: self.shard, index: 0, detail: "producer panicked".into() });
        }
        drop(st);
        self.shared.not_empty.notify_all();
        self.shared.not_full.notify_all();
    }
}

/// Consumer side of [`prefetch_pipeline`]. Yields every produced batch,
/// then an error if a producer failed, then `None`. Dropping the stream
/// stops and joins the producers.
pub struct PrefetchStream<T> {
    shared: Arc<Shared<T>>,
    handles: Vec<JoinHandle<()>>,
}

impl<T> PrefetchStream<T> {
    pub fn stats(&self) -> PrefetchStats {
        self.shared.lock().stats
    }
}

impl<T> Iterator for PrefetchStream<T> {
    type Item = Result<T, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut st = self.shared.lock();
        loop {
            if let Some(x) = st.queue.pop_front() {
                st.stats.delivered += 1;
                drop(st);
                self.shared.not_full.notify_one();
                return Some(Ok(x));
            }
            if st.live_producers == 0 {
                return st.error.take().map(Err);
            }
            st = self.shared.not_empty.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }
}

impl<T> Drop for PrefetchStream<T> {
    fn drop(&mut self) {
        self.shared.lock().closed = true;
        self.shared.not_full.notify_all();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

/// Starts `config.producers` threads; producer `p` prepares batches
/// `p, p + P, p + 2P, …` below `total` and pushes them into a queue holding
/// at most `config.capacity` batches. On the first producer error the
/// others stop; already queued batches are still delivered.
pub fn prefetch_pipeline<T, F>(config: &PrefetchConfig, total: usize, produce: F) -> Result<PrefetchStream<T>, PipelineError>
where
    T: Send + 'static,
    F: Fn(usize, usize) -> Result<T, String> + Send + Sync + 'static,
{
    if config.capacity == 0 {
        return Err(PipelineError::Config("queue capacity must be at least 1".into()));
    }
    if config.producers == 0 {
        return Err(PipelineError::Config("at least one producer is required".into()));
    }
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            queue: VecDeque::with_capacity(config.capacity),
            live_producers: config.producers,
            error: None,
            closed: false,
            stats: PrefetchStats::default(),
        }),
        not_full: Condvar::new(),
        not_empty: Condvar::new(),
        capacity: config.capacity,
    });
    let produce = Arc::new(produce);
    let p = config.producers;
    let handles = (0..p)
        .map(|shard| {
            let shared = Arc::clone(&shared);
            let produce = Arc::clone(&produce);
            std::thread::Builder::new()
                .name(format!("prefetch-{shard}"))
                .spawn(move || {
                    let _guard = ProducerGuard { shared: Arc::clone(&shared), shard };
                    for index in (shard..total).step_by(p) {
                        if shared.lock().error.is_some() {
                            return;
                        }
                        let item = match produce(shard, index) {
                            Ok(x) => x,
                            Err(detail) => {
                                let mut st = shared.lock();
                                if st.error.is_none() {
                                    st.error = Some(PipelineError::Producer { shard, index, detail });
                                }
                                return;
                            }
                        };
                        let mut st = shared.lock();
                        while st.queue.len() >= shared.capacity && !st.closed && st.error.is_none() {
                            st = shared.not_full.wait(st).unwrap_or_else(|e| e.into_inner());
                        }
                        if st.closed || st.error.is_some() {
                            return;
                        }
                        st.queue.push_back(item);
                        st.stats.produced += 1;
                        st.stats.max_depth = st.stats.max_depth.max(st.queue.len());
                        drop(st);
                        shared.not_empty.notify_one();
                    }
                })
                .map_err(PipelineError::Io)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PrefetchStream { shared, handles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn single_producer_keeps_order() {
        let cfg = PrefetchConfig { capacity: 1, producers: 1 };
        let out: Vec<usize> = prefetch_pipeline(&cfg, 50, |_, i| Ok(i)).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(out, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn many_producers_deliver_each_batch_once() {
        let cfg = PrefetchConfig { capacity: 3, producers: 4 };
        let mut stream = prefetch_pipeline(&cfg, 1000, |s, i| Ok((s, i * i))).unwrap();
        let mut seen: Vec<(usize, usize)> = stream.by_ref().map(|r| r.unwrap()).collect();
        seen.sort();
        let want: Vec<(usize, usize)> = (0..1000).map(|i| (i % 4, i * i)).collect();
        let mut want = want;
        want.sort();
        assert_eq!(seen, want);
        let st = stream.stats();
        assert!(st.max_depth <= 3);
        assert_eq!((st.produced, st.delivered), (1000, 1000));
    }

    #[test]
    fn slow_consumer_sees_bounded_depth() {
        let cfg = PrefetchConfig { capacity: 2, producers: 3 };
        let mut stream = prefetch_pipeline(&cfg, 30, |_, i| Ok(i)).unwrap();
        let mut n = 0;
        while let Some(x) = stream.next() {
            x.unwrap();
            n += 1;
            std::thread::sleep(Duration::from_millis(2));
        }
        assert_eq!(n, 30);
        assert_eq!(stream.stats().max_depth, 2);
    }

    #[test]
    fn producer_error_arrives_after_queued_batches() {
        let cfg = PrefetchConfig { capacity: 4, producers: 1 };
        let items: Vec<_> = prefetch_pipeline(&cfg, 10, |_, i| if i == 5 { Err("boom".into()) } else { Ok(i) })
            .unwrap()
            .collect();
        assert_eq!(items.len(), 6);
        assert!(items[..5].iter().all(|r| r.is_ok()));
        assert!(matches!(&items[5], Err(PipelineError::Producer { index: 5, .. })));
    }

    #[test]
    fn panicking_producer_is_reported() {
        let cfg = PrefetchConfig { capacity: 4, producers: 2 };
        let items: Vec<_> = prefetch_pipeline(&cfg, 10, |s, i| if s == 1 { panic!("bad shard") } else { Ok(i) })
            .unwrap()
            .collect();
        assert!(items.last().unwrap().is_err());
    }

    #[test]
    fn dropping_the_stream_stops_producers() {
        let cfg = PrefetchConfig { capacity: 1, producers: 2 };
        let mut stream = prefetch_pipeline(&cfg, 1_000_000, |_, i| Ok(vec![i; 8])).unwrap();
        assert!(stream.next().unwrap().is_ok());
        drop(stream);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(prefetch_pipeline(&PrefetchConfig { capacity: 0, producers: 1 }, 1, |_, i| Ok(i)).is_err());
        assert!(prefetch_pipeline(&PrefetchConfig { capacity: 1, producers: 0 }, 1, |_, i| Ok(i)).is_err());
    }
}
