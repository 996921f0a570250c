//! Client library: transaction sessions, two-phase commit coordination and
//! deferred verification of promises against a cached digest per shard.

mod session;
mod shardmap;
pub mod transport;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ledger::{LedgerDigest, TxnId};
use crate::shardserver::ErrorCode;
use crate::txnmgr::AbortReason;

pub use session::{CommittedTxn, Session, SessionConfig, SessionStats};
pub use shardmap::ShardMap;
pub use transport::{InProcess, TcpTransport, Transport, TransportError};

/// What a client saw when a shard's answer failed to check out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub shard: u32,
    pub tid: Option<TxnId>,
    /// The digest the client had verified before the failed check.
    pub cached: LedgerDigest,
    /// The digest the shard's answer was about.
    pub claimed: LedgerDigest,
    pub reason: String,
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shard {}: {} (cached {}, claimed {})", self.shard, self.reason, self.cached, self.claimed)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("unknown transaction {0}")]
    UnknownTxn(TxnId),
    #[error("aborted by shard {shard}: {reason:?}")]
    TxnAborted { shard: u32, reason: AbortReason },
    #[error("outcome of {0} unknown: commit not acknowledged")]
    TxnUnknown(TxnId),
    #[error("shard {shard} unreachable: {source}")]
    Unreachable {
        shard: u32,
        #[source]
        source: TransportError,
    },
    #[error("shard {shard} has persisted up to block {head}, need {due}")]
    NotYetPersisted { shard: u32, due: u64, head: u64 },
    #[error("tampering detected: {0}")]
    TamperDetected(Box<Evidence>),
    #[error("shard {shard} error {code:?}: {message}")]
    Server { shard: u32, code: ErrorCode, message: String },
    #[error("shard {shard} sent an unexpected reply: {reply}")]
    Unexpected { shard: u32, reply: String },
}

impl ClientError {
    /// Whether retrying the same transaction later may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ClientError::TxnAborted { .. } | ClientError::NotYetPersisted { .. } | ClientError::Unreachable { .. }
        )
    }
}
