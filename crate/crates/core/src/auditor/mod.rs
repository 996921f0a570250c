//! Auditors: replay a shard's signed transactions block by block, check
//! that the replayed ledger matches the shard's, and compare digests with
//! clients and other auditors to catch forked histories.

mod replay;
mod net;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::TransportError;
use crate::ledger::LedgerDigest;

pub use replay::{AuditState, Auditor, AuditorConfig};
pub use net::{AuditorServer, RemoteAuditor};

/// Proof that a shard showed two parties different histories: two digests
/// for the same block number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkEvidence {
    pub shard: u32,
    pub block_no: u64,
    /// The digest this auditor replayed.
    pub ours: LedgerDigest,
    /// The conflicting digest.
    pub theirs: LedgerDigest,
    /// Who presented the conflicting digest.
    pub source: String,
    /// The append-only check between the two digests that fails, as the
    /// shard answered it: a refusal, or a hex-encoded proof that does not
    /// verify.
    pub failing_proof: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// The digest matches the replayed history.
    Accepted,
    /// The auditor cannot judge yet, e.g. the shard has not served the
    /// block.
    Deferred { reason: String },
    Fork(ForkEvidence),
    /// The shard's block does not follow from its signed transactions.
    Rejected { block_no: u64, reason: String },
}

impl Verdict {
    pub fn is_fork(&self) -> bool {
        matches!(self, Verdict::Fork(_))
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("shard unreachable: {0}")]
    Transport(#[from] TransportError),
    #[error("unexpected shard reply: {0}")]
    Shard(String),
    #[error("auditor unreachable: {0}")]
    Io(#[from] io::Error),
    #[error("bad auditor message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("auditor refused: {0}")]
    Remote(String),
}

/// A way to reach an auditor of one shard.
pub trait AuditorLink: Send + Sync {
    fn register(&self, client_id: u64, public_key: [u8; 32]) -> Result<(), AuditError>;
    fn submit(&self, digest: LedgerDigest, source: &str) -> Result<Verdict, AuditError>;
}
