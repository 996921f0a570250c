use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::shardmap::ShardMap;
use super::transport::Transport;
use super::{ClientError, Evidence};
use crate::auditor::{AuditorLink, Verdict};
use crate::ledger::{At, LedgerDigest, TxnId};
use crate::proofs::{check_append, check_bundle, check_current_proof, check_inclusion_proof, Claim, CurrentValueProof, Rejection};
use crate::shardserver::{ErrorCode, Reply, Request};
use crate::txnmgr::{now_ms, ClientKey, Promise, Transaction, Vote};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// How long after commit a promise is verified. Zero persists at
    /// commit and verifies straight away.
    pub delay_ms: u64,
    /// Attempts per prepare/commit message before giving up.
    pub attempts: u32,
    /// Submit digests to auditors after this many verifications; 0 only
    /// on request.
    pub audit_every: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            delay_ms: 100,
            attempts: 3,
            audit_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ReadRecord {
    shard: u32,
    value: Option<Vec<u8>>,
    version: u64,
    digest: LedgerDigest,
}

#[derive(Debug, Default)]
struct OpenTxn {
    reads: BTreeMap<Vec<u8>, ReadRecord>,
    writes: BTreeMap<Vec<u8>, Vec<u8>>,
}

/// A committed transaction awaiting or past verification.
#[derive(Debug, Clone)]
pub struct CommittedTxn {
    pub tid: TxnId,
    pub promises: BTreeMap<u32, Promise>,
    reads: BTreeMap<Vec<u8>, ReadRecord>,
    /// Wall-clock time (ms) after which verification is expected to work.
    pub due_ms: u64,
    pub verified: bool,
}

/// Timings and proof sizes gathered since the last
/// [`take_stats`](Session::take_stats).
#[derive(Debug, Clone, Default)]
pub struct SessionStats {
    /// Prepare round of each commit.
    pub prepare: Vec<Duration>,
    /// Commit round of each successful commit.
    pub commit: Vec<Duration>,
    /// Waiting for synchronous persistence (zero delay only).
    pub persist: Vec<Duration>,
    /// Fetching and checking each proof reply.
    pub proof: Vec<Duration>,
    pub proof_bytes: u64,
    pub proof_nodes: u64,
    /// Key/value facts covered by the proofs.
    pub keys_verified: u64,
}

impl SessionStats {
    fn add_proof(&mut self, started: Instant, bytes: usize, nodes: usize, keys: usize) {
        self.proof.push(started.elapsed());
        self.proof_bytes += bytes as u64;
        self.proof_nodes += nodes as u64;
        self.keys_verified += keys as u64;
    }
}

/// Verification work for one shard.
struct ShardCheck<'a> {
    shard: u32,
    tids: Vec<TxnId>,
    writes: Vec<Claim>,
    reads: Vec<(&'a Vec<u8>, &'a ReadRecord)>,
}

/// A client session: signs transactions, coordinates two-phase commit
/// across shards, caches one verified digest per shard and checks every
/// proof against it. Single-threaded; run one session per thread.
pub struct Session {
    key: ClientKey,
    map: ShardMap,
    shards: Vec<Box<dyn Transport>>,
    config: SessionConfig,
    digests: Vec<LedgerDigest>,
    counter: u64,
    open: HashMap<TxnId, OpenTxn>,
    committed: HashMap<TxnId, CommittedTxn>,
    auditors: HashMap<u32, Vec<Arc<dyn AuditorLink>>>,
    since_audit: u32,
    stats: SessionStats,
}

fn order(a: LedgerDigest, b: LedgerDigest) -> (LedgerDigest, LedgerDigest) {
    if a.block_no <= b.block_no {
        (a, b)
    } else {
        (b, a)
    }
}

impl Session {
    /// `shards[i]` must reach shard `i`.
    pub fn new(key: ClientKey, shards: Vec<Box<dyn Transport>>, config: SessionConfig) -> Session {
        let n = shards.len() as u32;
        Session {
            key,
            map: ShardMap::new(n),
            digests: vec![LedgerDigest::genesis(); shards.len()],
            shards,
            config,
            counter: 0,
            open: HashMap::new(),
            committed: HashMap::new(),
            auditors: HashMap::new(),
            since_audit: 0,
            stats: SessionStats::default(),
        }
    }

    pub fn client_id(&self) -> u64 {
        self.key.client_id()
    }

    pub fn shard_map(&self) -> ShardMap {
        self.map
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn set_delay_ms(&mut self, ms: u64) {
        self.config.delay_ms = ms;
    }

    pub fn take_stats(&mut self) -> SessionStats {
        std::mem::take(&mut self.stats)
    }

    /// The verified digest cached for `shard`.
    pub fn digest(&self, shard: u32) -> LedgerDigest {
        self.digests[shard as usize]
    }

    /// Registers the client's key with an auditor of `shard` and keeps it
    /// for later submissions.
    pub fn add_auditor(&mut self, shard: u32, auditor: Arc<dyn AuditorLink>) {
        if let Err(e) = auditor.register(self.key.client_id(), self.key.public_key()) {
            log::warn!("key registration with auditor failed: {e}");
        }
        self.auditors.entry(shard).or_default().push(auditor);
    }

    pub fn begin_txn(&mut self) -> TxnId {
        self.counter += 1;
        let tid = TxnId {
            client_id: self.key.client_id(),
            client_ts: now_ms(),
            counter: self.counter,
        };
        self.open.insert(tid, OpenTxn::default());
        tid
    }

    fn call(&self, shard: u32, req: Request) -> Result<Reply, ClientError> {
        let mut last = None;
        for _ in 0..self.config.attempts.max(1) {
            match self.shards[shard as usize].call(req.clone()) {
                Ok(r) => return Ok(r),
                Err(e) => last = Some(e),
            }
        }
        Err(ClientError::Unreachable {
            shard,
            source: last.expect("at least one attempt"),
        })
    }

    fn unexpected(shard: u32, reply: Reply) -> ClientError {
        match reply {
            Reply::Error { code, message } => ClientError::Server { shard, code, message },
            Reply::NotYetPersisted { due, head } => ClientError::NotYetPersisted { shard, due, head },
            other => ClientError::Unexpected {
                shard,
                reply: format!("{other:?}"),
            },
        }
    }

    fn raw_get(&self, key: &[u8], at: At) -> Result<(u32, Option<(Vec<u8>, u64)>, LedgerDigest), ClientError> {
        let shard = self.map.shard_of(key);
        match self.call(
            shard,
            Request::Get {
                key: key.to_vec(),
                at,
            },
        )? {
            Reply::Value { entry, digest } => Ok((shard, entry, digest)),
            other => Err(Self::unexpected(shard, other)),
        }
    }

    /// Reads within a transaction. The transaction's own writes are seen
    /// first; latest reads join its read set.
    pub fn get(&mut self, tid: TxnId, key: &[u8], at: At) -> Result<Option<Vec<u8>>, ClientError> {
        let txn = self.open.get(&tid).ok_or(ClientError::UnknownTxn(tid))?;
        if at == At::Latest {
            if let Some(v) = txn.writes.get(key) {
                return Ok(Some(v.clone()));
            }
            if let Some(r) = txn.reads.get(key) {
                return Ok(r.value.clone());
            }
        }
        let (shard, entry, digest) = self.raw_get(key, at)?;
        let value = entry.as_ref().map(|(v, _)| v.clone());
        if at == At::Latest {
            let rec = ReadRecord {
                shard,
                value: value.clone(),
                version: entry.map(|(_, b)| b).unwrap_or(0),
                digest,
            };
            self.open.get_mut(&tid).unwrap().reads.insert(key.to_vec(), rec);
        }
        Ok(value)
    }

    pub fn put(&mut self, tid: TxnId, key: &[u8], value: &[u8]) -> Result<(), ClientError> {
        let txn = self.open.get_mut(&tid).ok_or(ClientError::UnknownTxn(tid))?;
        txn.writes.insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    /// Drops an open transaction without contacting any shard.
    pub fn discard(&mut self, tid: TxnId) {
        self.open.remove(&tid);
    }

    fn abort_all(&self, tid: TxnId, shards: &[u32]) {
        for &s in shards {
            if let Err(e) = self.call(s, Request::Abort(tid)) {
                log::warn!("abort of {tid} on shard {s} not delivered: {e}");
            }
        }
    }

    /// Two-phase commit with this session as coordinator. Returns one
    /// promise per shard touched.
    pub fn commit_txn(&mut self, tid: TxnId) -> Result<BTreeMap<u32, Promise>, ClientError> {
        let txn = self.open.remove(&tid).ok_or(ClientError::UnknownTxn(tid))?;
        let mut per_shard: BTreeMap<u32, (Vec<(Vec<u8>, u64)>, Vec<(Vec<u8>, Vec<u8>)>)> = BTreeMap::new();
        for (k, r) in &txn.reads {
            per_shard.entry(r.shard).or_default().0.push((k.clone(), r.version));
        }
        for (k, v) in &txn.writes {
            per_shard
                .entry(self.map.shard_of(k))
                .or_default()
                .1
                .push((k.clone(), v.clone()));
        }
        let touched: Vec<u32> = per_shard.keys().copied().collect();
        let started = Instant::now();
        let mut prepared = Vec::new();
        for (&shard, (reads, writes)) in &per_shard {
            let signed = Transaction::sign(&self.key, tid, reads.clone(), writes.clone());
            prepared.push(shard);
            let failure = match self.call(shard, Request::Prepare(signed)) {
                Ok(Reply::Vote(Vote::Commit)) => continue,
                Ok(Reply::Vote(Vote::Abort(reason))) => ClientError::TxnAborted { shard, reason },
                Ok(other) => Self::unexpected(shard, other),
                Err(e) => e,
            };
            self.abort_all(tid, &prepared);
            return Err(failure);
        }
        self.stats.prepare.push(started.elapsed());
        let started = Instant::now();
        let mut promises = BTreeMap::new();
        for &shard in &touched {
            match self.call(shard, Request::Commit(tid)) {
                Ok(Reply::Promise(p)) => {
                    promises.insert(shard, p);
                }
                Ok(other) => return Err(Self::unexpected(shard, other)),
                Err(_) => return Err(ClientError::TxnUnknown(tid)),
            }
        }
        self.stats.commit.push(started.elapsed());
        self.committed.insert(
            tid,
            CommittedTxn {
                tid,
                promises: promises.clone(),
                reads: txn.reads,
                due_ms: now_ms() + self.config.delay_ms,
                verified: false,
            },
        );
        if self.config.delay_ms == 0 {
            let started = Instant::now();
            for &shard in &touched {
                match self.call(shard, Request::Flush)? {
                    Reply::Digest(_) => {}
                    other => return Err(Self::unexpected(shard, other)),
                }
            }
            self.stats.persist.push(started.elapsed());
            self.verify(tid)?;
        }
        Ok(promises)
    }

    pub fn committed(&self, tid: &TxnId) -> Option<&CommittedTxn> {
        self.committed.get(tid)
    }

    /// Committed transactions not yet verified.
    pub fn unverified(&self) -> Vec<TxnId> {
        let mut v: Vec<_> = self.committed.values().filter(|c| !c.verified).map(|c| c.tid).collect();
        v.sort();
        v
    }

    /// Forgets verified transactions.
    pub fn prune_verified(&mut self) {
        self.committed.retain(|_, c| !c.verified);
    }

    fn tamper(&self, shard: u32, tid: Option<TxnId>, claimed: LedgerDigest, reason: impl Into<String>) -> ClientError {
        ClientError::TamperDetected(Box::new(Evidence {
            shard,
            tid,
            cached: self.digests[shard as usize],
            claimed,
            reason: reason.into(),
        }))
    }

    fn rejected(&self, shard: u32, tid: Option<TxnId>, claimed: LedgerDigest, what: &str, r: Rejection) -> ClientError {
        self.tamper(shard, tid, claimed, format!("{what}: {}", r.0))
    }

    /// Moves the cached digest forward; only called after an append-only
    /// proof from the cached digest has been checked.
    fn advance(&mut self, shard: u32, d: LedgerDigest) {
        let cur = &mut self.digests[shard as usize];
        if d.block_no > cur.block_no {
            *cur = d;
        }
    }

    fn check_shard(&mut self, work: ShardCheck<'_>) -> Result<(), ClientError> {
        let ShardCheck {
            shard,
            tids,
            mut writes,
            reads,
        } = work;
        let tid = (tids.len() == 1).then(|| tids[0]);
        let from = self.digests[shard as usize];
        let read_at = reads.iter().map(|(_, r)| r.digest).max_by_key(|d| d.block_no);
        if let Some(at) = read_at {
            if let Some((_, r)) = reads
                .iter()
                .find(|(_, r)| r.digest.block_no == at.block_no && r.digest != at)
            {
                return Err(self.tamper(shard, tid, r.digest, "two different digests for one block"));
            }
        }
        let mut current = Vec::new();
        let mut pending = Vec::new();
        for (k, r) in &reads {
            let Some(v) = &r.value else { continue };
            if r.version <= read_at.unwrap().block_no {
                current.push(((*k).clone(), v.clone()));
            } else {
                pending.push((r.version, (*k).clone()));
                writes.push(Claim {
                    block_no: r.version,
                    key: (*k).clone(),
                    value: v.clone(),
                });
            }
        }
        let started = Instant::now();
        let reply = self.call(
            shard,
            Request::GetProof {
                tids: tids.clone(),
                from,
                read_at,
                current_keys: current.iter().map(|(k, _)| k.clone()).collect(),
                pending_reads: pending,
            },
        )?;
        let (digest, to_read, current_proof, bundle, to_new) = match reply {
            Reply::TxnProofs {
                digest,
                to_read,
                current,
                bundle,
                to_new,
            } => (digest, to_read, current, bundle, to_new),
            Reply::Error {
                code: ErrorCode::UnknownDigest,
                message,
            } => return Err(self.tamper(shard, tid, from, format!("shard disowns a digest: {message}"))),
            other => return Err(Self::unexpected(shard, other)),
        };
        let base = match read_at {
            Some(r) => {
                let (lo, hi) = order(from, r);
                let p = to_read.as_ref().ok_or_else(|| self.tamper(shard, tid, r, "no proof linking the read digest"))?;
                check_append(p, &lo, &hi).map_err(|e| self.rejected(shard, tid, r, "read digest", e))?;
                if !current.is_empty() {
                    let p = current_proof.as_ref().ok_or_else(|| self.tamper(shard, tid, r, "no current-value proof"))?;
                    check_current_proof(p, &r, &current).map_err(|e| self.rejected(shard, tid, r, "reads", e))?;
                }
                hi
            }
            None => from,
        };
        check_bundle(&bundle, &digest, &writes).map_err(|e| self.rejected(shard, tid, digest, "writes", e))?;
        check_append(&to_new, &base, &digest).map_err(|e| self.rejected(shard, tid, digest, "new digest", e))?;
        self.advance(shard, digest);
        let mut bytes = bundle.encode().len() + to_new.encode().len();
        let mut nodes = bundle.node_count() + to_new.nodes.len();
        if let Some(p) = &to_read {
            bytes += p.encode().len();
            nodes += p.nodes.len();
        }
        if let Some(p) = &current_proof {
            bytes += p.encode().len();
            nodes += p.0.node_count();
        }
        self.stats.add_proof(started, bytes, nodes, writes.len() + current.len());
        Ok(())
    }

    fn shard_work<'a>(c: &'a CommittedTxn) -> BTreeMap<u32, ShardCheck<'a>> {
        let mut out: BTreeMap<u32, ShardCheck<'a>> = BTreeMap::new();
        let entry = |shard: u32| ShardCheck {
            shard,
            tids: vec![c.tid],
            writes: Vec::new(),
            reads: Vec::new(),
        };
        for (&shard, p) in &c.promises {
            let w = out.entry(shard).or_insert_with(|| entry(shard));
            w.writes.extend(p.writes.iter().map(|pw| Claim {
                block_no: pw.block_no,
                key: pw.key.clone(),
                value: pw.value.clone(),
            }));
        }
        for (k, r) in &c.reads {
            out.entry(r.shard).or_insert_with(|| entry(r.shard)).reads.push((k, r));
        }
        out
    }

    /// Checks everything a committed transaction relied on and produced:
    /// the read digest extends the cached one, the reads were current
    /// there, the writes sit in their promised blocks and the newest
    /// digest extends the read digest. Verifying twice is a no-op.
    pub fn verify(&mut self, tid: TxnId) -> Result<(), ClientError> {
        let c = self.committed.get(&tid).ok_or(ClientError::UnknownTxn(tid))?.clone();
        if c.verified {
            return Ok(());
        }
        for (_, work) in Self::shard_work(&c) {
            self.check_shard(work)?;
        }
        self.committed.get_mut(&tid).unwrap().verified = true;
        self.after_verification();
        Ok(())
    }

    /// Verifies many transactions. Write-only ones are checked together
    /// with one proof bundle per shard; the rest one by one.
    pub fn verify_batch(&mut self, tids: &[TxnId]) -> Result<(), ClientError> {
        let mut batched: BTreeMap<u32, ShardCheck<'static>> = BTreeMap::new();
        let mut singles = Vec::new();
        let mut members = Vec::new();
        for tid in tids {
            let c = self.committed.get(tid).ok_or(ClientError::UnknownTxn(*tid))?;
            if c.verified {
                continue;
            }
            if !c.reads.is_empty() {
                singles.push(*tid);
                continue;
            }
            members.push(*tid);
            for (&shard, p) in &c.promises {
                let w = batched.entry(shard).or_insert_with(|| ShardCheck {
                    shard,
                    tids: Vec::new(),
                    writes: Vec::new(),
                    reads: Vec::new(),
                });
                w.tids.push(*tid);
                w.writes.extend(p.writes.iter().map(|pw| Claim {
                    block_no: pw.block_no,
                    key: pw.key.clone(),
                    value: pw.value.clone(),
                }));
            }
        }
        for (_, work) in batched {
            self.check_shard(work)?;
        }
        for tid in members {
            self.committed.get_mut(&tid).unwrap().verified = true;
        }
        for tid in singles {
            self.verify(tid)?;
        }
        self.after_verification();
        Ok(())
    }

    fn read_proof(
        &mut self,
        shard: u32,
        key: &[u8],
        at: Option<LedgerDigest>,
        block: Option<u64>,
    ) -> Result<(LedgerDigest, crate::proofs::InclusionProof), ClientError> {
        let from = self.digests[shard as usize];
        let started = Instant::now();
        let reply = self.call(
            shard,
            Request::ProveRead {
                from,
                at,
                block,
                keys: vec![key.to_vec()],
            },
        )?;
        match reply {
            Reply::ReadProof { digest, proof, append } => {
                if at.is_some_and(|a| a != digest) {
                    return Err(self.tamper(shard, None, digest, "proof made for another digest"));
                }
                let (lo, hi) = order(from, digest);
                check_append(&append, &lo, &hi).map_err(|e| self.rejected(shard, None, digest, "read digest", e))?;
                self.stats.add_proof(
                    started,
                    proof.encode().len() + append.encode().len(),
                    proof.node_count() + append.nodes.len(),
                    1,
                );
                Ok((digest, proof))
            }
            Reply::Error {
                code: ErrorCode::UnknownDigest,
                message,
            } => Err(self.tamper(shard, None, from, format!("shard disowns a digest: {message}"))),
            other => Err(Self::unexpected(shard, other)),
        }
    }

    /// Latest value of `key`, checked against a digest that extends the
    /// cached one. Absent keys cannot be proven and come back as `None`
    /// unverified. A version not yet persisted yields `NotYetPersisted`.
    pub fn get_verified(&mut self, key: &[u8]) -> Result<Option<Vec<u8>>, ClientError> {
        let (shard, entry, at) = self.raw_get(key, At::Latest)?;
        let Some((value, version)) = entry else {
            return Ok(None);
        };
        let expected = [(key.to_vec(), value.clone())];
        if version <= at.block_no {
            let (digest, proof) = self.read_proof(shard, key, Some(at), None)?;
            check_current_proof(&CurrentValueProof(proof), &digest, &expected)
                .map_err(|e| self.rejected(shard, None, digest, "current value", e))?;
            self.advance(shard, digest);
        } else {
            let (digest, proof) = self.read_proof(shard, key, None, Some(version))?;
            if proof.block_no != version {
                return Err(self.tamper(shard, None, digest, "value proven at the wrong block"));
            }
            check_inclusion_proof(&proof, &digest, &expected)
                .map_err(|e| self.rejected(shard, None, digest, "value", e))?;
            self.advance(shard, digest);
        }
        self.after_verification();
        Ok(Some(value))
    }

    /// Value of `key` as of the block of `at`, proven under `at`, which
    /// must extend (or precede) the cached digest.
    pub fn get_at_verified(&mut self, key: &[u8], at: LedgerDigest) -> Result<Option<Vec<u8>>, ClientError> {
        let (shard, entry, _) = self.raw_get(key, At::Block(at.block_no))?;
        let Some((value, _)) = entry else {
            return Ok(None);
        };
        let (digest, proof) = self.read_proof(shard, key, Some(at), None)?;
        check_inclusion_proof(&proof, &digest, &[(key.to_vec(), value.clone())])
            .map_err(|e| self.rejected(shard, None, digest, "historical value", e))?;
        self.advance(shard, digest);
        Ok(Some(value))
    }

    /// Up to `limit` persisted versions of `key`, newest first, each with
    /// the block that wrote it. Every version is proven under the shard's
    /// current digest, to which the cache is advanced first.
    pub fn get_history_verified(&mut self, key: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, u64)>, ClientError> {
        let shard = self.map.shard_of(key);
        let at = self.refresh_digest(shard)?;
        let mut out = Vec::new();
        let mut upto = at.block_no;
        while out.len() < limit && upto > 0 {
            let (_, entry, _) = self.raw_get(key, At::Block(upto))?;
            let Some((value, version)) = entry else { break };
            if version > upto || version == 0 {
                return Err(self.tamper(shard, None, at, "version outside the requested range"));
            }
            let (digest, proof) = self.read_proof(shard, key, Some(at), Some(version))?;
            if proof.block_no != version {
                return Err(self.tamper(shard, None, digest, "value proven at the wrong block"));
            }
            check_inclusion_proof(&proof, &digest, &[(key.to_vec(), value.clone())])
                .map_err(|e| self.rejected(shard, None, digest, "historical value", e))?;
            out.push((value, version));
            upto = version - 1;
        }
        Ok(out)
    }

    /// Advances the cached digest of `shard` to the shard's current one,
    /// checking the append-only proof.
    pub fn refresh_digest(&mut self, shard: u32) -> Result<LedgerDigest, ClientError> {
        let from = self.digests[shard as usize];
        let started = Instant::now();
        match self.call(shard, Request::ProveAppend { from, to: None })? {
            Reply::AppendProof { digest, proof } => {
                let (lo, hi) = order(from, digest);
                check_append(&proof, &lo, &hi).map_err(|e| self.rejected(shard, None, digest, "digest", e))?;
                self.stats.add_proof(started, proof.encode().len(), proof.nodes.len(), 0);
                self.advance(shard, digest);
                Ok(self.digests[shard as usize])
            }
            Reply::Error {
                code: ErrorCode::UnknownDigest,
                message,
            } => Err(self.tamper(shard, None, from, format!("shard disowns a digest: {message}"))),
            other => Err(Self::unexpected(shard, other)),
        }
    }

    fn after_verification(&mut self) {
        if self.config.audit_every == 0 {
            return;
        }
        self.since_audit += 1;
        if self.since_audit >= self.config.audit_every {
            self.since_audit = 0;
            self.audit_submit();
        }
    }

    /// Sends every cached digest to the shard's auditors. Failures are
    /// logged; the verdicts are returned for callers that care.
    pub fn audit_submit(&self) -> Vec<(u32, Verdict)> {
        let source = format!("client {}", self.key.client_id());
        let mut out = Vec::new();
        for (&shard, links) in &self.auditors {
            let d = self.digests[shard as usize];
            for link in links {
                match link.submit(d, &source) {
                    Ok(v) => out.push((shard, v)),
                    Err(e) => log::warn!("audit submission for shard {shard} failed: {e}"),
                }
            }
        }
        out
    }
}
