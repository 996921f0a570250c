//! Pattern-oriented split tree: an immutable Merkle search tree whose node
//! boundaries come from content-defined chunking, so its shape depends only
//! on the set of entries and never on how they were inserted.
//!
//! The same structure serves as the per-shard state tree (keyed by data key)
//! and as the block tree (keyed by big-endian block number).

mod chunk;
mod node;
mod store;
mod tree;

use thiserror::Error;

use crate::codec::DecodeError;
use crate::hash::Hash;

pub use chunk::{chunk_entries, pattern_hash, ChunkConfig};
pub use node::{node_hash, route, ChildRef, Entry, NodeRef, PosNode};
pub use store::{FaultyStore, FileStore, MemStore, NodeStore, StoreError, NODE_LOG_MAGIC, NODE_LOG_VERSION};
pub use tree::{Lookup, PosTree, TreeRoot};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("root {0} not found")]
    NotFound(Hash),
    #[error("corrupt tree: missing or malformed node {0}")]
    CorruptTree(Hash),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}
