//! Sharded sampling engine: TCP server per partition, a retrying client
//! that fans requests out by node owner, the embedding store and the
//! nearline refresher.

pub mod client;
pub mod epoch;
pub mod nearline;
pub mod partition;
pub mod server;
pub mod store;
pub mod wire;

use thiserror::Error;

pub use client::{fan_out_sample, ClientError, ClientStats, EngineClient, RetryPolicy};
pub use epoch::EpochGraph;
pub use partition::{partition_hash, partition_of, PartitionMap};
pub use nearline::{InteractionEvent, NearlineConfig, NearlineError, NearlineRefresher, NearlineReport};
pub use server::{serve, spawn_local_cluster, ServerHandle, ShardState};
pub use store::{EmbeddingStore, Entry, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Nearline(#[from] NearlineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
