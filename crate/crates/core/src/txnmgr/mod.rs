//! Transaction manager: optimistic validation, two-phase commit
//! participation, the committed-data map and batched persistence.

mod cdm;
mod manager;
mod txn;

use thiserror::Error;

use crate::ledger::{LedgerError, TxnId};

pub use cdm::CommittedDataMap;
pub use manager::{now_ms, AbortReason, Persister, TxnConfig, TxnManager, Vote};
pub use txn::{client_id_of, ClientKey, Promise, PromisedWrite, Transaction};

#[derive(Debug, Error)]
pub enum TxnError {
    #[error("transaction {0} has an invalid signature")]
    BadSignature(TxnId),
    #[error("invalid transaction: {0}")]
    InvalidTxn(String),
    #[error("transaction {0} not prepared")]
    NotFound(TxnId),
    #[error("transaction {0} was aborted")]
    AlreadyAborted(TxnId),
    #[error("corrupt transaction log: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("WAL write failed: {0}")]
    Io(#[from] std::io::Error),
}
