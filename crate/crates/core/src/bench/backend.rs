use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::client::{ClientError, InProcess, Session, SessionConfig, SessionStats, TcpTransport, Transport};
use crate::ledger::{At, LedgerDigest, TxnId};
use crate::shardserver::ShardNode;
use crate::txnmgr::ClientKey;

/// What the benchmarks need from a verifiable key-value store.
pub trait Backend {
    fn begin(&mut self) -> TxnId;
    fn get(&mut self, tid: TxnId, key: &[u8]) -> Result<Option<Vec<u8>>, ClientError>;
    fn put(&mut self, tid: TxnId, key: &[u8], value: &[u8]) -> Result<(), ClientError>;
    /// Commits; with zero delay also persists and verifies.
    fn commit(&mut self, tid: TxnId) -> Result<(), ClientError>;
    /// Drops an open transaction without contacting any shard.
    fn discard(&mut self, tid: TxnId);
    /// Verifies committed transactions together.
    fn verify(&mut self, tids: &[TxnId]) -> Result<(), ClientError>;
    /// The verified digest of the shard holding `key`.
    fn digest_for(&self, key: &[u8]) -> LedgerDigest;
    /// Value of `key` at `at`, proven under `at`.
    fn get_at_verified(&mut self, key: &[u8], at: LedgerDigest) -> Result<Option<Vec<u8>>, ClientError>;
    /// Newest `limit` persisted versions of `key`, each proven.
    fn get_history_verified(&mut self, key: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, u64)>, ClientError>;
    fn take_stats(&mut self) -> SessionStats;
}

impl Backend for Session {
    fn begin(&mut self) -> TxnId {
        self.begin_txn()
    }

    fn get(&mut self, tid: TxnId, key: &[u8]) -> Result<Option<Vec<u8>>, ClientError> {
        Session::get(self, tid, key, At::Latest)
    }

    fn put(&mut self, tid: TxnId, key: &[u8], value: &[u8]) -> Result<(), ClientError> {
        Session::put(self, tid, key, value)
    }

    fn commit(&mut self, tid: TxnId) -> Result<(), ClientError> {
        self.commit_txn(tid).map(|_| ())
    }

    fn discard(&mut self, tid: TxnId) {
        Session::discard(self, tid)
    }

    fn verify(&mut self, tids: &[TxnId]) -> Result<(), ClientError> {
        self.verify_batch(tids)
    }

    fn digest_for(&self, key: &[u8]) -> LedgerDigest {
        self.digest(self.shard_map().shard_of(key))
    }

    fn get_at_verified(&mut self, key: &[u8], at: LedgerDigest) -> Result<Option<Vec<u8>>, ClientError> {
        Session::get_at_verified(self, key, at)
    }

    fn get_history_verified(&mut self, key: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, u64)>, ClientError> {
        Session::get_history_verified(self, key, limit)
    }

    fn take_stats(&mut self) -> SessionStats {
        Session::take_stats(self)
    }
}

/// Shards a benchmark talks to: in this process or over TCP.
pub enum Cluster {
    Local(Vec<Arc<ShardNode>>),
    Remote(Vec<String>),
}

impl Cluster {
    /// In-memory shards with their persisters running.
    pub fn local(shards: u32) -> Cluster {
        let nodes: Vec<Arc<ShardNode>> = (0..shards).map(|i| Arc::new(ShardNode::in_memory(i, shards))).collect();
        for n in &nodes {
            n.start_persister();
        }
        Cluster::Local(nodes)
    }

    pub fn remote(endpoints: Vec<String>) -> Cluster {
        Cluster::Remote(endpoints)
    }

    pub fn shards(&self) -> u32 {
        match self {
            Cluster::Local(n) => n.len() as u32,
            Cluster::Remote(e) => e.len() as u32,
        }
    }

    /// A session whose key is derived from `seed`.
    pub fn session(&self, seed: u64, delay_ms: u64) -> Session {
        let key = ClientKey::generate(&mut StdRng::seed_from_u64(seed));
        let transports: Vec<Box<dyn Transport>> = match self {
            Cluster::Local(nodes) => nodes
                .iter()
                .map(|n| Box::new(InProcess::new(n.clone())) as Box<dyn Transport>)
                .collect(),
            Cluster::Remote(endpoints) => endpoints
                .iter()
                .map(|e| Box::new(TcpTransport::new(e.clone(), Duration::from_millis(200))) as Box<dyn Transport>)
                .collect(),
        };
        Session::new(
            key,
            transports,
            SessionConfig {
                delay_ms,
                ..SessionConfig::default()
            },
        )
    }

    /// Blocks and stored keys summed over shards. Key counts are only
    /// known for local shards.
    pub fn totals(&self) -> (u64, u64) {
        match self {
            Cluster::Local(nodes) => nodes.iter().fold((0, 0), |(b, k), n| {
                let l = n.ledger();
                let head = l.head_block();
                let keys = if head == 0 { 0 } else { l.block(head).map(|blk| blk.state_keys).unwrap_or(0) };
                (b + head, k + keys)
            }),
            Cluster::Remote(_) => {
                let mut s = self.session(u64::MAX, 0);
                let blocks = (0..self.shards())
                    .filter_map(|i| s.refresh_digest(i).ok())
                    .map(|d| d.block_no)
                    .sum();
                (blocks, 0)
            }
        }
    }
}
