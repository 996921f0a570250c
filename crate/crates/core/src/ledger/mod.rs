//! The two-level ledger of one shard: a state tree over current key/value
//! pairs and a block tree over data blocks. The block tree's root, together
//! with the latest block number, is the shard's digest.
//!
//! Directory layout: `nodes.log` (content-addressed node store),
//! `wal.log` (write-ahead log) and `blocks.map` (persisted block hashes).

mod block;
mod blockmap;
mod chain;
mod wal;

use thiserror::Error;

use crate::codec::DecodeError;
use crate::postree::{StoreError, TreeError};

pub use block::{block_key, BatchWrite, DataBlock, LedgerDigest, TxnId, WriteBatch};
pub use blockmap::{BlockMap, BLOCK_MAP_MAGIC, BLOCK_MAP_VERSION};
pub use chain::{
    At, CrashPoint, Ledger, LedgerConfig, RecoveryReport, RecoveryStatus, BLOCK_MAP_FILE, NODES_FILE, WAL_FILE,
};
pub use wal::{parse_frames, Wal, WalRecord, WalReplay, WAL_MAGIC, WAL_VERSION};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("block {0} not found")]
    BlockNotFound(u64),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("corrupt ledger: {0}")]
    Corrupt(String),
    #[error("injected crash at {0:?}")]
    InjectedCrash(CrashPoint),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}
