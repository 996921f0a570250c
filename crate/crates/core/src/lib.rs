//! A sharded verifiable ledger key-value store.
//!
//! Each shard keeps its data in a two-level authenticated tree: a state tree
//! over the current key/value pairs and a block tree over data blocks, whose
//! root is the shard's ledger digest. Clients run serializable transactions
//! (optimistic validation plus client-coordinated two-phase commit), receive
//! promises naming the block where each write will land, and later verify
//! batched inclusion, current-value and append-only proofs. Auditors replay
//! signed transactions and gossip digests to catch forked histories.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod auditor;
pub mod bench;
pub mod client;
pub mod codec;
pub mod hash;
pub mod ledger;
pub mod postree;
pub mod proofs;
pub mod shardserver;
pub mod txnmgr;

pub use hash::Hash;
