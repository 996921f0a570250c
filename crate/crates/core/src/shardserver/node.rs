use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::protocol::{ErrorCode, Reply, Request};
use crate::ledger::{At, Ledger, LedgerConfig, LedgerDigest, RecoveryReport, TxnId};
use crate::postree::PosNode;
use crate::proofs::{prove_append, prove_bundle, prove_current, prove_inclusion, AppendOnlyProof, InclusionProof, ProofError};
use crate::txnmgr::{now_ms, Persister, Transaction, TxnConfig, TxnError, TxnManager};

/// Anything that answers requests: an honest shard or a faulty one.
/// `conn` identifies the connection or session the request came from.
pub trait Service: Send + Sync {
    fn handle(&self, conn: u64, req: Request) -> Reply;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShardConfig {
    pub listen: String,
    /// None keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub shard_id: u32,
    pub shards: u32,
    #[serde(flatten)]
    pub txn: TxnConfig,
    pub ledger: LedgerConfig,
}

impl Default for ShardConfig {
    fn default() -> Self {
        ShardConfig {
            listen: "127.0.0.1:7400".into(),
            data_dir: None,
            shard_id: 0,
            shards: 1,
            txn: TxnConfig::default(),
            ledger: LedgerConfig::default(),
        }
    }
}

/// Deliberate misbehaviour, for testing that clients and auditors notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    Honest,
    /// Latest reads return a key's previous version, and read proofs are
    /// made for that version's block.
    StaleReads,
    /// One value inside every returned proof is altered.
    TamperProofs,
}

/// One shard: a ledger, its transaction manager and the proof service.
pub struct ShardNode {
    config: ShardConfig,
    txn: Arc<TxnManager>,
    fault: Mutex<Fault>,
    persister: Mutex<Option<Persister>>,
}

fn txn_error(e: TxnError) -> Reply {
    match e {
        TxnError::BadSignature(_) => Reply::error(ErrorCode::BadSignature, e.to_string()),
        TxnError::InvalidTxn(_) => Reply::error(ErrorCode::BadRequest, e.to_string()),
        TxnError::NotFound(_) => Reply::error(ErrorCode::NotFound, e.to_string()),
        TxnError::AlreadyAborted(_) => Reply::error(ErrorCode::Aborted, e.to_string()),
        _ => Reply::error(ErrorCode::Internal, e.to_string()),
    }
}

fn proof_error(e: ProofError) -> Reply {
    match e {
        ProofError::UnknownDigest(_) => Reply::error(ErrorCode::UnknownDigest, e.to_string()),
        ProofError::OutOfRange { .. } | ProofError::KeyNotFound { .. } => {
            Reply::error(ErrorCode::BadRequest, e.to_string())
        }
        ProofError::Ledger(_) => Reply::error(ErrorCode::Internal, e.to_string()),
    }
}

/// Append-only proof between two digests in whichever order they fall.
fn append_between(ledger: &Ledger, a: &LedgerDigest, b: &LedgerDigest) -> Result<AppendOnlyProof, ProofError> {
    if a.block_no <= b.block_no {
        prove_append(ledger, a, b)
    } else {
        prove_append(ledger, b, a)
    }
}

fn tamper(nodes: &mut [PosNode]) {
    if let Some(PosNode::Leaf(entries)) = nodes.iter_mut().rev().find(|n| n.is_leaf()) {
        if let Some(e) = entries.first_mut() {
            e.value.push(b'!');
        }
    }
}

impl ShardNode {
    /// Opens the shard's ledger (recovering it if `data_dir` holds one).
    pub fn open(config: ShardConfig) -> Result<(ShardNode, RecoveryReport), TxnError> {
        let (ledger, report) = match &config.data_dir {
            Some(dir) => Ledger::open(dir, config.ledger)?,
            None => (Ledger::in_memory(config.ledger), RecoveryReport::default()),
        };
        let txn = TxnManager::recover(Arc::new(ledger), config.txn, &report.records)?;
        Ok((ShardNode::from_manager(config, txn), report))
    }

    pub fn in_memory(shard_id: u32, shards: u32) -> ShardNode {
        let config = ShardConfig {
            shard_id,
            shards,
            ..ShardConfig::default()
        };
        ShardNode::open(config).expect("in-memory shard").0
    }

    pub fn from_manager(config: ShardConfig, txn: TxnManager) -> ShardNode {
        ShardNode {
            config,
            txn: Arc::new(txn),
            fault: Mutex::new(Fault::Honest),
            persister: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &ShardConfig {
        &self.config
    }

    pub fn txn(&self) -> &Arc<TxnManager> {
        &self.txn
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        self.txn.ledger()
    }

    pub fn set_fault(&self, f: Fault) {
        *self.fault.lock() = f;
    }

    /// Starts the background persister at the configured interval.
    pub fn start_persister(&self) {
        let mut p = self.persister.lock();
        if p.is_none() {
            *p = Some(self.txn.spawn_persister());
        }
    }

    /// Stops the persister after a final tick, so nothing committed is
    /// left unpersisted.
    pub fn shutdown(&self) {
        if let Some(p) = self.persister.lock().take() {
            p.stop();
        }
    }

    /// Persists pending writes with the given block timestamp.
    pub fn tick(&self, now: u64) -> Result<LedgerDigest, TxnError> {
        self.txn.persist_tick(now)?;
        Ok(self.ledger().digest())
    }

    /// Commits a transaction nobody signed. A faulty shard only.
    pub fn inject_unsigned(&self, writes: Vec<(Vec<u8>, Vec<u8>)>) -> Result<TxnId, TxnError> {
        let tid = TxnId {
            client_id: u64::MAX,
            client_ts: now_ms(),
            counter: self.ledger().head_block(),
        };
        let mut t = Transaction {
            tid,
            public_key: [0; 32],
            read_set: Vec::new(),
            write_set: writes,
            signature: [0; 64],
        };
        t.write_set.sort();
        t.write_set.dedup_by(|a, b| a.0 == b.0);
        self.txn.prepare_unverified(t)?;
        self.txn.commit(tid)?;
        Ok(tid)
    }

    fn get(&self, key: Vec<u8>, at: At) -> Result<Reply, TxnError> {
        let digest = self.ledger().digest();
        let mut entry = self.txn.read(&key, at)?;
        if *self.fault.lock() == Fault::StaleReads && at == At::Latest {
            if let Some((_, b)) = &entry {
                if *b > 1 && *b <= digest.block_no {
                    if let Some(old) = self.ledger().get_versioned(&key, At::Block(b - 1))? {
                        entry = Some(old);
                    }
                }
            }
        }
        Ok(Reply::Value { entry, digest })
    }

    fn get_proof(
        &self,
        tids: Vec<TxnId>,
        from: LedgerDigest,
        read_at: Option<LedgerDigest>,
        current_keys: Vec<Vec<u8>>,
        pending_reads: Vec<(u64, Vec<u8>)>,
    ) -> Result<Reply, ProofError> {
        let ledger = self.ledger();
        let digest = ledger.digest();
        let mut items = pending_reads;
        for tid in &tids {
            let Some(p) = self.txn.promise(tid) else {
                return Ok(Reply::error(ErrorCode::NotFound, format!("no promise for {tid}")));
            };
            items.extend(p.writes.iter().map(|w| (w.block_no, w.key.clone())));
        }
        let due = items.iter().map(|(b, _)| *b).max().unwrap_or(0);
        if due > digest.block_no {
            return Ok(Reply::NotYetPersisted {
                due,
                head: digest.block_no,
            });
        }
        let mut bundle = prove_bundle(ledger, &digest, &items)?;
        let (to_read, current, base) = match read_at {
            Some(r) => {
                let current = if current_keys.is_empty() {
                    None
                } else {
                    Some(prove_current(ledger, &r, &current_keys)?)
                };
                let base = if r.block_no >= from.block_no { r } else { from };
                (Some(append_between(ledger, &from, &r)?), current, base)
            }
            None => (None, None, from),
        };
        let to_new = prove_append(ledger, &base, &digest)?;
        if *self.fault.lock() == Fault::TamperProofs {
            tamper(&mut bundle.lower);
        }
        Ok(Reply::TxnProofs {
            digest,
            to_read,
            current,
            bundle,
            to_new,
        })
    }

    fn prove_read(
        &self,
        from: LedgerDigest,
        at: Option<LedgerDigest>,
        block: Option<u64>,
        keys: Vec<Vec<u8>>,
    ) -> Result<Reply, ProofError> {
        let ledger = self.ledger();
        let at = at.unwrap_or_else(|| ledger.digest());
        let mut block = block.unwrap_or(at.block_no);
        if block > at.block_no {
            return Ok(Reply::NotYetPersisted {
                due: block,
                head: at.block_no,
            });
        }
        let fault = *self.fault.lock();
        if fault == Fault::StaleReads && block == at.block_no {
            // Claim the previous version is current by proving it where
            // it was written.
            if let Some(k) = keys.first() {
                let v = ledger.version_of(k);
                if v > 1 {
                    if let Some((_, b)) = ledger.get_versioned(k, At::Block(v - 1))? {
                        block = b;
                    }
                }
            }
        }
        let mut proof: InclusionProof = prove_inclusion(ledger, &at, block, &keys)?;
        if fault == Fault::TamperProofs {
            tamper(&mut proof.lower);
        }
        Ok(Reply::ReadProof {
            digest: at,
            proof,
            append: append_between(ledger, &from, &at)?,
        })
    }

    fn audit_block(&self, block_no: u64) -> Result<Reply, TxnError> {
        let ledger = self.ledger();
        if block_no == 0 || block_no > ledger.head_block() {
            return Ok(Reply::error(ErrorCode::NotFound, format!("block {block_no} not persisted")));
        }
        let block = ledger.block(block_no)?;
        let manifest = ledger.manifest(block_no).unwrap_or_default();
        let mut txns = Vec::with_capacity(block.txn_ids.len());
        for tid in &block.txn_ids {
            match self.txn.committed_txn(tid) {
                Some(t) => txns.push((*t).clone()),
                None => return Ok(Reply::error(ErrorCode::Internal, format!("transaction {tid} missing"))),
            }
        }
        Ok(Reply::AuditBlock {
            digest: ledger.digest_at(block_no).expect("persisted block"),
            block,
            txns,
            manifest,
        })
    }

    /// Answers one request.
    pub fn dispatch(&self, req: Request) -> Reply {
        let result = match req {
            Request::Prepare(t) => self.txn.prepare(t).map(Reply::Vote),
            Request::Commit(tid) => self.txn.commit(tid).map(|p| Reply::Promise((*p).clone())),
            Request::Abort(tid) => self.txn.abort(tid).map(|_| Reply::Ack),
            Request::Get { key, at } => self.get(key, at),
            Request::GetDigest => Ok(Reply::Digest(self.ledger().digest())),
            Request::Flush => self.tick(now_ms()).map(Reply::Digest),
            Request::GetProof {
                tids,
                from,
                read_at,
                current_keys,
                pending_reads,
            } => return self
                .get_proof(tids, from, read_at, current_keys, pending_reads)
                .unwrap_or_else(proof_error),
            Request::ProveRead { from, at, block, keys } => {
                return self.prove_read(from, at, block, keys).unwrap_or_else(proof_error)
            }
            Request::ProveAppend { from, to } => {
                let ledger = self.ledger();
                let to = to.unwrap_or_else(|| ledger.digest());
                return match append_between(ledger, &from, &to) {
                    Ok(proof) => Reply::AppendProof { digest: to, proof },
                    Err(e) => proof_error(e),
                };
            }
            Request::AuditBlock { block_no } => self.audit_block(block_no),
        };
        result.unwrap_or_else(txn_error)
    }
}

impl Service for ShardNode {
    fn handle(&self, _conn: u64, req: Request) -> Reply {
        self.dispatch(req)
    }
}

impl Drop for ShardNode {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A shard that keeps two histories. Until [`fork`](Self::fork) is called
/// every request is applied to both and the histories stay identical;
/// afterwards even connections see one history and odd connections the
/// other, each seeing only its own side's writes.
pub struct EquivocatingShard {
    sides: [ShardNode; 2],
    forked: AtomicBool,
}

impl EquivocatingShard {
    pub fn new(shard_id: u32, shards: u32) -> EquivocatingShard {
        EquivocatingShard {
            sides: [ShardNode::in_memory(shard_id, shards), ShardNode::in_memory(shard_id, shards)],
            forked: AtomicBool::new(false),
        }
    }

    pub fn fork(&self) {
        self.forked.store(true, Ordering::SeqCst);
    }

    pub fn is_forked(&self) -> bool {
        self.forked.load(Ordering::SeqCst)
    }

    pub fn side(&self, i: usize) -> &ShardNode {
        &self.sides[i]
    }

    /// Persists both histories with the same block timestamp.
    pub fn tick(&self, now: u64) -> Result<(), TxnError> {
        for s in &self.sides {
            s.tick(now)?;
        }
        Ok(())
    }
}

impl Service for EquivocatingShard {
    fn handle(&self, conn: u64, req: Request) -> Reply {
        let mine = (conn % 2) as usize;
        let mutates = matches!(
            req,
            Request::Prepare(_) | Request::Commit(_) | Request::Abort(_) | Request::Flush
        );
        if mutates && !self.is_forked() {
            let now = now_ms();
            let replies: Vec<Reply> = self
                .sides
                .iter()
                .map(|s| match req {
                    Request::Flush => s.tick(now).map(Reply::Digest).unwrap_or_else(txn_error),
                    _ => s.dispatch(req.clone()),
                })
                .collect();
            return replies.into_iter().nth(mine).unwrap();
        }
        self.sides[mine].dispatch(req)
    }
}
