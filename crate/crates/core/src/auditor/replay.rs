use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{AuditError, AuditorLink, ForkEvidence, Verdict};
use crate::client::Transport;
use crate::hash::Hash;
use crate::ledger::{BatchWrite, DataBlock, Ledger, LedgerConfig, LedgerDigest, TxnId, WriteBatch};
use crate::proofs::verify_append;
use crate::shardserver::{ErrorCode, Reply, Request};
use crate::txnmgr::{client_id_of, Transaction};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditorConfig {
    pub shard_id: u32,
    /// Names this auditor in fork evidence it hands to peers.
    pub name: String,
    /// Reject transactions from clients that never registered their key.
    pub require_registration: bool,
    /// Must match the shard's chunking or no digest will ever match.
    pub ledger: LedgerConfig,
}

impl Default for AuditorConfig {
    fn default() -> Self {
        AuditorConfig {
            shard_id: 0,
            name: "auditor".into(),
            require_registration: false,
            ledger: LedgerConfig::default(),
        }
    }
}

/// Checkpoint of an auditor, saved as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditState {
    pub shard: u32,
    /// Last digest replayed and matched.
    pub digest: LedgerDigest,
    /// State root of the replayed ledger at `digest`.
    pub state_root: Hash,
    /// Registered client keys, hex encoded.
    pub registry: BTreeMap<u64, String>,
    pub evidence: Vec<ForkEvidence>,
    pub rejected: Option<(u64, String)>,
}

impl AuditState {
    pub fn load(path: impl AsRef<Path>) -> Result<AuditState, AuditError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Writes to a temporary file and renames it over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AuditError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Audits one shard by replaying its blocks into a private ledger.
pub struct Auditor {
    config: AuditorConfig,
    server: Box<dyn Transport>,
    replay: Ledger,
    registry: RwLock<HashMap<u64, [u8; 32]>>,
    evidence: Mutex<Vec<ForkEvidence>>,
    rejected: Mutex<Option<(u64, String)>>,
    peers: RwLock<Vec<(String, Arc<dyn AuditorLink>)>>,
    step: Mutex<()>,
}

impl Auditor {
    pub fn new(config: AuditorConfig, server: Box<dyn Transport>) -> Auditor {
        Auditor {
            replay: Ledger::in_memory(config.ledger),
            config,
            server,
            registry: RwLock::new(HashMap::new()),
            evidence: Mutex::new(Vec::new()),
            rejected: Mutex::new(None),
            peers: RwLock::new(Vec::new()),
            step: Mutex::new(()),
        }
    }

    /// Rebuilds an auditor from a checkpoint by replaying the shard up to
    /// the checkpointed block. The verdict says whether the shard still
    /// serves the history it served before.
    pub fn restore(
        config: AuditorConfig,
        server: Box<dyn Transport>,
        state: &AuditState,
    ) -> Result<(Auditor, Verdict), AuditError> {
        let a = Auditor::new(config, server);
        {
            let mut reg = a.registry.write();
            for (id, hex_key) in &state.registry {
                let key: [u8; 32] = hex::decode(hex_key)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| AuditError::Remote(format!("bad key for client {id} in checkpoint")))?;
                reg.insert(*id, key);
            }
        }
        *a.evidence.lock() = state.evidence.clone();
        *a.rejected.lock() = state.rejected.clone();
        while a.head() < state.digest.block_no {
            match a.verify_block(a.head() + 1)? {
                Verdict::Accepted => {}
                Verdict::Deferred { .. } => {
                    let v = Verdict::Rejected {
                        block_no: a.head() + 1,
                        reason: "shard no longer serves a block it served before".into(),
                    };
                    return Ok((a, v));
                }
                other => return Ok((a, other)),
            }
        }
        let v = a.compare(state.digest, "checkpoint");
        Ok((a, v))
    }

    pub fn state(&self) -> AuditState {
        AuditState {
            shard: self.config.shard_id,
            digest: self.digest(),
            state_root: self.replay.state_root().root_hash,
            registry: self.registry.read().iter().map(|(id, k)| (*id, hex::encode(k))).collect(),
            evidence: self.evidence(),
            rejected: self.rejected.lock().clone(),
        }
    }

    pub fn config(&self) -> &AuditorConfig {
        &self.config
    }

    /// Digest of the replayed history.
    pub fn digest(&self) -> LedgerDigest {
        self.replay.digest()
    }

    pub fn head(&self) -> u64 {
        self.replay.head_block()
    }

    pub fn evidence(&self) -> Vec<ForkEvidence> {
        self.evidence.lock().clone()
    }

    pub fn rejected(&self) -> Option<(u64, String)> {
        self.rejected.lock().clone()
    }

    pub fn add_peer(&self, name: impl Into<String>, peer: Arc<dyn AuditorLink>) {
        self.peers.write().push((name.into(), peer));
    }

    pub fn register_key(&self, client_id: u64, public_key: [u8; 32]) -> Result<(), AuditError> {
        if client_id_of(&public_key) != client_id {
            return Err(AuditError::Remote(format!("client id {client_id} does not belong to the key")));
        }
        self.registry.write().insert(client_id, public_key);
        Ok(())
    }

    fn reject(&self, block_no: u64, reason: String) -> Verdict {
        log::warn!("shard {} block {block_no} rejected: {reason}", self.config.shard_id);
        *self.rejected.lock() = Some((block_no, reason.clone()));
        Verdict::Rejected { block_no, reason }
    }

    /// Fetches and replays block `block_no`, which must be the next one.
    pub fn verify_block(&self, block_no: u64) -> Result<Verdict, AuditError> {
        let _one = self.step.lock();
        if let Some((b, reason)) = self.rejected() {
            return Ok(Verdict::Rejected { block_no: b, reason });
        }
        let head = self.head();
        if block_no <= head {
            return Ok(Verdict::Accepted);
        }
        if block_no != head + 1 {
            return Ok(Verdict::Deferred {
                reason: format!("blocks are replayed in order; next is {}", head + 1),
            });
        }
        match self.server.call(Request::AuditBlock { block_no })? {
            Reply::AuditBlock {
                digest,
                block,
                txns,
                manifest,
            } => Ok(match self.replay_block(block_no, digest, block, txns, manifest) {
                Ok(()) => Verdict::Accepted,
                Err(reason) => self.reject(block_no, reason),
            }),
            Reply::Error {
                code: ErrorCode::NotFound,
                message,
            } => Ok(Verdict::Deferred { reason: message }),
            other => Err(AuditError::Shard(format!("{other:?}"))),
        }
    }

    fn replay_block(
        &self,
        block_no: u64,
        digest: LedgerDigest,
        block: DataBlock,
        txns: Vec<Transaction>,
        manifest: Vec<(Vec<u8>, TxnId)>,
    ) -> Result<(), String> {
        if block.block_no != block_no || digest.block_no != block_no {
            return Err(format!("asked for block {block_no}, got {}", block.block_no));
        }
        let by_tid: HashMap<TxnId, &Transaction> = txns.iter().map(|t| (t.tid, t)).collect();
        let listed: HashSet<TxnId> = block.txn_ids.iter().copied().collect();
        if by_tid.len() != txns.len() || by_tid.keys().copied().collect::<HashSet<_>>() != listed {
            return Err("transactions served do not match the block's list".into());
        }
        let registry = self.registry.read();
        for t in &txns {
            t.verify_signature().map_err(|_| format!("transaction {} is not validly signed", t.tid))?;
            match registry.get(&t.tid.client_id) {
                Some(k) if *k != t.public_key => return Err(format!("transaction {} signed with an unregistered key", t.tid)),
                None if self.config.require_registration => {
                    return Err(format!("transaction {} from unregistered client", t.tid))
                }
                _ => {}
            }
        }
        drop(registry);
        let mut writes = Vec::with_capacity(manifest.len());
        let mut writers = HashSet::new();
        for (key, tid) in manifest {
            let t = by_tid
                .get(&tid)
                .ok_or_else(|| format!("write of {} by a transaction not in the block", String::from_utf8_lossy(&key)))?;
            let value = t
                .value_of(&key)
                .ok_or_else(|| format!("transaction {tid} never wrote {}", String::from_utf8_lossy(&key)))?;
            writes.push(BatchWrite {
                value: value.to_vec(),
                key,
                tid,
            });
            writers.insert(tid);
        }
        if writers != listed {
            return Err("a listed transaction wrote nothing in the block".into());
        }
        for w in &writes {
            let t = by_tid[&w.tid];
            if let Some((_, read)) = t.read_set.iter().find(|(k, _)| *k == w.key) {
                let prev = self.replay.version_of(&w.key);
                if *read != prev {
                    return Err(format!(
                        "transaction {} read {} at block {read} but overwrote block {prev}",
                        t.tid,
                        String::from_utf8_lossy(&w.key)
                    ));
                }
            }
        }
        if block_no > 1 {
            let prev = self.replay.block(block_no - 1).map_err(|e| e.to_string())?;
            if block.timestamp_ms < prev.timestamp_ms {
                return Err("block timestamp goes backwards".into());
            }
        }
        let (local, local_digest) = self
            .replay
            .append_block(WriteBatch::new(writes), block.timestamp_ms)
            .map_err(|e| format!("replay failed: {e}"))?;
        if local != block {
            return Err("block does not match its transactions".into());
        }
        if local_digest != digest {
            return Err(format!("digest {digest} does not match replayed {local_digest}"));
        }
        Ok(())
    }

    /// Replays every block the shard has persisted and checks its current
    /// digest against the replay.
    pub fn catch_up(&self) -> Result<Verdict, AuditError> {
        let target = match self.server.call(Request::GetDigest)? {
            Reply::Digest(d) => d,
            other => return Err(AuditError::Shard(format!("{other:?}"))),
        };
        while self.head() < target.block_no {
            match self.verify_block(self.head() + 1)? {
                Verdict::Accepted => {}
                other => return Ok(other),
            }
        }
        Ok(self.compare(target, "shard"))
    }

    fn compare(&self, d: LedgerDigest, source: &str) -> Verdict {
        if let Some((block_no, reason)) = self.rejected() {
            return Verdict::Rejected { block_no, reason };
        }
        let Some(ours) = self.replay.digest_at(d.block_no) else {
            return Verdict::Deferred {
                reason: format!("block {} not replayed yet", d.block_no),
            };
        };
        if ours == d {
            return Verdict::Accepted;
        }
        let ev = ForkEvidence {
            shard: self.config.shard_id,
            block_no: d.block_no,
            ours,
            theirs: d,
            source: source.to_string(),
            failing_proof: self.failing_proof(&d),
        };
        log::warn!("fork on shard {} at block {}: {} vs {} from {source}", ev.shard, ev.block_no, ours, d);
        self.record(ev.clone());
        Verdict::Fork(ev)
    }

    /// Asks the shard to link `theirs` with this auditor's digest.
    fn failing_proof(&self, theirs: &LedgerDigest) -> String {
        let mine = self.digest();
        let (from, to) = if theirs.block_no <= mine.block_no { (*theirs, mine) } else { (mine, *theirs) };
        match self.server.call(Request::ProveAppend { from, to: Some(to) }) {
            Ok(Reply::AppendProof { proof, .. }) if verify_append(&proof, &from, &to) => {
                format!("shard proved {from} -> {to} append-only, contradicting the replay")
            }
            Ok(Reply::AppendProof { proof, .. }) => {
                format!("append-only proof {from} -> {to} fails: {}", hex::encode(proof.encode()))
            }
            Ok(Reply::Error { code, message }) => format!("no append-only proof {from} -> {to}: {code:?}: {message}"),
            Ok(other) => format!("no append-only proof {from} -> {to}: unexpected reply {other:?}"),
            Err(e) => format!("no append-only proof {from} -> {to}: {e}"),
        }
    }

    fn record(&self, ev: ForkEvidence) {
        let mut all = self.evidence.lock();
        if !all.contains(&ev) {
            all.push(ev);
        }
    }

    /// Judges a digest someone received from the shard, replaying further
    /// first if needed.
    pub fn verify_digest(&self, d: LedgerDigest, source: &str) -> Verdict {
        if d.block_no > self.head() {
            if let Err(e) = self.catch_up() {
                return Verdict::Deferred { reason: e.to_string() };
            }
        }
        self.compare(d, source)
    }

    /// Sends this auditor's digest to every peer. A fork found by a peer is
    /// recorded here as well.
    pub fn gossip(&self) -> Vec<(String, Result<Verdict, AuditError>)> {
        let mine = self.digest();
        let peers = self.peers.read().clone();
        let mut out = Vec::with_capacity(peers.len());
        for (name, peer) in peers {
            let v = peer.submit(mine, &self.config.name);
            if let Ok(Verdict::Fork(ev)) = &v {
                self.record(ForkEvidence {
                    shard: ev.shard,
                    block_no: ev.block_no,
                    ours: ev.theirs,
                    theirs: ev.ours,
                    source: name.clone(),
                    failing_proof: ev.failing_proof.clone(),
                });
            }
            out.push((name, v));
        }
        out
    }
}

impl AuditorLink for Auditor {
    fn register(&self, client_id: u64, public_key: [u8; 32]) -> Result<(), AuditError> {
        self.register_key(client_id, public_key)
    }

    fn submit(&self, digest: LedgerDigest, source: &str) -> Result<Verdict, AuditError> {
        Ok(self.verify_digest(digest, source))
    }
}
