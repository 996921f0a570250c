//! Inclusion, current-value and append-only proofs over the two-level
//! ledger, plus multi-block bundles for deferred verification.
//!
//! Generation needs a [`Ledger`](crate::ledger::Ledger); verification is a
//! pure function of the proof, a trusted digest and the expected values.
//! The byte layout is described in `PROOFS.md` at the repository root.

mod generate;
mod types;
mod verify;

use thiserror::Error;

use crate::ledger::{LedgerDigest, LedgerError};
use crate::postree::TreeError;

pub use generate::{prove_append, prove_bundle, prove_current, prove_inclusion};
pub use types::{AppendOnlyProof, Claim, CurrentValueProof, InclusionProof, ProofBundle};
pub use verify::{
    check_append, check_bundle, check_current_proof, check_inclusion_proof, verify_append, verify_bundle,
    verify_current, verify_inclusion, Rejection,
};

#[derive(Debug, Error)]
pub enum ProofError {
    #[error("digest {0} is not part of this ledger")]
    UnknownDigest(LedgerDigest),
    #[error("block {block_no} outside 1..={head}")]
    OutOfRange { block_no: u64, head: u64 },
    #[error("key {} not present at block {block_no}", String::from_utf8_lossy(.key))]
    KeyNotFound { block_no: u64, key: Vec<u8> },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl From<TreeError> for ProofError {
    fn from(e: TreeError) -> Self {
        ProofError::Ledger(LedgerError::Tree(e))
    }
}
