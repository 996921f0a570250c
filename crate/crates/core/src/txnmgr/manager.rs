use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, RecvTimeoutError, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::cdm::CommittedDataMap;
use super::txn::{Promise, PromisedWrite, Transaction};
use super::TxnError;
use crate::ledger::{At, DataBlock, Ledger, LedgerDigest, TxnId, WalRecord, WriteBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TxnConfig {
    pub persist_interval_ms: u64,
    /// Prepared transactions allowed at once; more are aborted.
    pub txn_queue_depth: usize,
    pub worker_threads: usize,
}

impl Default for TxnConfig {
    fn default() -> Self {
        TxnConfig {
            persist_interval_ms: 10,
            txn_queue_depth: 4096,
            worker_threads: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    QueueFull,
    /// A read observed a version that is no longer current.
    StaleRead { key: Vec<u8>, read: u64, current: u64 },
    /// Another prepared transaction holds a conflicting lock.
    Conflict { key: Vec<u8>, holder: TxnId },
    /// The coordinator already decided to abort this transaction.
    Decided,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vote {
    Commit,
    Abort(AbortReason),
}

#[derive(Debug, Clone)]
enum Decision {
    Committed(Arc<Promise>),
    Aborted,
}

#[derive(Debug, Default)]
struct KeyLock {
    writer: Option<TxnId>,
    readers: Vec<TxnId>,
}

#[derive(Default)]
struct State {
    prepared: HashMap<TxnId, Arc<Transaction>>,
    decided: HashMap<TxnId, Decision>,
    locks: HashMap<Vec<u8>, KeyLock>,
    cdm: CommittedDataMap,
    /// Every block up to here has its contents fixed; new versions go
    /// after it.
    sealed: u64,
    /// Committed transactions, kept for auditors.
    archive: HashMap<TxnId, Arc<Transaction>>,
    last_timestamp: u64,
}

impl State {
    fn current_version(&self, ledger: &Ledger, key: &[u8]) -> u64 {
        self.cdm
            .latest(key)
            .map(|(_, b)| b)
            .unwrap_or_else(|| ledger.version_of(key))
    }

    fn conflict(&self, t: &Transaction) -> Option<AbortReason> {
        let other = |id: &TxnId| *id != t.tid;
        for (k, _) in &t.write_set {
            if let Some(l) = self.locks.get(k) {
                if let Some(holder) = l.writer.iter().chain(&l.readers).find(|id| other(id)) {
                    return Some(AbortReason::Conflict {
                        key: k.clone(),
                        holder: *holder,
                    });
                }
            }
        }
        for (k, _) in &t.read_set {
            if let Some(holder) = self.locks.get(k).and_then(|l| l.writer).filter(other) {
                return Some(AbortReason::Conflict { key: k.clone(), holder });
            }
        }
        None
    }

    fn lock(&mut self, t: &Transaction) {
        for (k, _) in &t.write_set {
            self.locks.entry(k.clone()).or_default().writer = Some(t.tid);
        }
        for (k, _) in &t.read_set {
            self.locks.entry(k.clone()).or_default().readers.push(t.tid);
        }
    }

    fn unlock(&mut self, t: &Transaction) {
        for k in t.write_set.iter().map(|(k, _)| k).chain(t.read_set.iter().map(|(k, _)| k)) {
            if let Some(l) = self.locks.get_mut(k) {
                if l.writer == Some(t.tid) {
                    l.writer = None;
                }
                l.readers.retain(|id| *id != t.tid);
                if l.writer.is_none() && l.readers.is_empty() {
                    self.locks.remove(k);
                }
            }
        }
    }
}

/// Per-shard transaction manager: validates and commits transactions,
/// buffers committed writes and persists them to the ledger in blocks.
pub struct TxnManager {
    ledger: Arc<Ledger>,
    config: TxnConfig,
    state: Mutex<State>,
    persist: Mutex<()>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl TxnManager {
    /// A manager over a ledger with no transaction history to restore.
    pub fn new(ledger: Arc<Ledger>, config: TxnConfig) -> TxnManager {
        Self::recover(ledger, config, &[]).expect("nothing to recover")
    }

    /// Rebuilds transaction state from the surviving WAL: decisions,
    /// prepared transactions (with their locks) and committed writes not
    /// yet in the ledger.
    pub fn recover(ledger: Arc<Ledger>, config: TxnConfig, records: &[WalRecord]) -> Result<TxnManager, TxnError> {
        let mut st = State {
            sealed: ledger.head_block(),
            last_timestamp: match ledger.head_block() {
                0 => 0,
                b => ledger.block(b)?.timestamp_ms,
            },
            ..Default::default()
        };
        let mut txns: HashMap<TxnId, Arc<Transaction>> = HashMap::new();
        let mut commits = Vec::new();
        for rec in records {
            match rec {
                WalRecord::Prepare { tid, txn } => {
                    let t = Arc::new(Transaction::decode(txn).map_err(|e| TxnError::Corrupt(e.to_string()))?);
                    txns.insert(*tid, t.clone());
                    st.prepared.insert(*tid, t);
                }
                WalRecord::Commit { tid, promised } => {
                    st.prepared.remove(tid);
                    commits.push((*tid, promised));
                }
                WalRecord::Abort { tid } => {
                    st.prepared.remove(tid);
                    st.decided.insert(*tid, Decision::Aborted);
                }
                WalRecord::Batch { .. } => {}
            }
        }
        let persisted = ledger.persisted_writes();
        let digest = ledger.digest();
        for (tid, promised) in commits {
            let t = txns
                .get(&tid)
                .ok_or_else(|| TxnError::Corrupt(format!("commit of {tid} without prepare")))?;
            let mut writes = Vec::new();
            for (k, b) in promised {
                let value = t
                    .value_of(k)
                    .ok_or_else(|| TxnError::Corrupt(format!("{tid} promised unwritten key")))?
                    .to_vec();
                if !persisted.contains(&(k.clone(), tid)) {
                    if *b <= ledger.head_block() {
                        return Err(TxnError::Corrupt(format!("{tid} promised block {b}, already sealed")));
                    }
                    st.cdm.insert(k.clone(), value.clone(), tid, *b);
                    st.sealed = st.sealed.max(*b);
                }
                writes.push(PromisedWrite {
                    key: k.clone(),
                    value,
                    block_no: *b,
                });
            }
            st.archive.insert(tid, t.clone());
            st.decided.insert(tid, Decision::Committed(Arc::new(Promise { tid, writes, digest })));
        }
        let prepared: Vec<_> = st.prepared.values().cloned().collect();
        for t in prepared {
            st.lock(&t);
        }
        Ok(TxnManager {
            ledger,
            config,
            state: Mutex::new(st),
            persist: Mutex::new(()),
        })
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn config(&self) -> TxnConfig {
        self.config
    }

    /// Validates `txn` and, on a commit vote, locks its keys until the
    /// decision arrives. A repeated prepare returns the recorded vote.
    pub fn prepare(&self, txn: Transaction) -> Result<Vote, TxnError> {
        txn.verify_signature()?;
        self.validate_and_lock(txn)
    }

    /// Prepares without checking the signature. Only a misbehaving shard
    /// does this; auditors must catch the result.
    pub fn prepare_unverified(&self, txn: Transaction) -> Result<Vote, TxnError> {
        self.validate_and_lock(txn)
    }

    fn validate_and_lock(&self, txn: Transaction) -> Result<Vote, TxnError> {
        let mut st = self.state.lock();
        match st.decided.get(&txn.tid) {
            Some(Decision::Committed(_)) => return Ok(Vote::Commit),
            Some(Decision::Aborted) => return Ok(Vote::Abort(AbortReason::Decided)),
            None => {}
        }
        if let Some(p) = st.prepared.get(&txn.tid) {
            if **p != txn {
                return Err(TxnError::InvalidTxn(format!("{} prepared with different contents", txn.tid)));
            }
            return Ok(Vote::Commit);
        }
        if st.prepared.len() >= self.config.txn_queue_depth {
            return Ok(Vote::Abort(AbortReason::QueueFull));
        }
        for (k, read) in &txn.read_set {
            let current = st.current_version(&self.ledger, k);
            if current != *read {
                return Ok(Vote::Abort(AbortReason::StaleRead {
                    key: k.clone(),
                    read: *read,
                    current,
                }));
            }
        }
        if let Some(reason) = st.conflict(&txn) {
            return Ok(Vote::Abort(reason));
        }
        self.ledger.wal().append(
            &WalRecord::Prepare {
                tid: txn.tid,
                txn: txn.encode(),
            },
            true,
        )?;
        let txn = Arc::new(txn);
        st.lock(&txn);
        st.prepared.insert(txn.tid, txn);
        Ok(Vote::Commit)
    }

    /// Commits a prepared transaction: its writes join the committed-data
    /// map, each promised to a block, and its locks are released.
    pub fn commit(&self, tid: TxnId) -> Result<Arc<Promise>, TxnError> {
        let mut st = self.state.lock();
        match st.decided.get(&tid) {
            Some(Decision::Committed(p)) => return Ok(p.clone()),
            Some(Decision::Aborted) => return Err(TxnError::AlreadyAborted(tid)),
            None => {}
        }
        let txn = st.prepared.get(&tid).cloned().ok_or(TxnError::NotFound(tid))?;
        let floor = st.sealed + 1;
        let writes: Vec<PromisedWrite> = txn
            .write_set
            .iter()
            .map(|(k, v)| PromisedWrite {
                key: k.clone(),
                value: v.clone(),
                block_no: floor.max(st.current_version(&self.ledger, k) + 1),
            })
            .collect();
        self.ledger.wal().append(
            &WalRecord::Commit {
                tid,
                promised: writes.iter().map(|w| (w.key.clone(), w.block_no)).collect(),
            },
            true,
        )?;
        for w in &writes {
            st.cdm.insert(w.key.clone(), w.value.clone(), tid, w.block_no);
        }
        st.prepared.remove(&tid);
        st.unlock(&txn);
        st.archive.insert(tid, txn);
        let promise = Arc::new(Promise {
            tid,
            writes,
            digest: self.ledger.digest(),
        });
        st.decided.insert(tid, Decision::Committed(promise.clone()));
        Ok(promise)
    }

    /// Aborts `tid`, releasing its locks. Aborting an unknown transaction
    /// is recorded so that a late prepare of it is refused; aborting a
    /// committed one does nothing.
    pub fn abort(&self, tid: TxnId) -> Result<(), TxnError> {
        let mut st = self.state.lock();
        match st.decided.get(&tid) {
            Some(_) => return Ok(()),
            None => {}
        }
        self.ledger.wal().append(&WalRecord::Abort { tid }, false)?;
        if let Some(t) = st.prepared.remove(&tid) {
            st.unlock(&t);
        }
        st.decided.insert(tid, Decision::Aborted);
        Ok(())
    }

    /// Reads a key. Latest reads see committed but unpersisted writes,
    /// with their promised block as version; historical reads go to the
    /// ledger.
    pub fn read(&self, key: &[u8], at: At) -> Result<Option<(Vec<u8>, u64)>, TxnError> {
        if at == At::Latest {
            let st = self.state.lock();
            if let Some((v, b)) = st.cdm.latest(key) {
                return Ok(Some((v.to_vec(), b)));
            }
            // Hold the lock so a concurrent tick cannot remove a version
            // between the map check and the ledger read.
            return Ok(self.ledger.get_latest(key)?);
        }
        Ok(self.ledger.get_versioned(key, at)?)
    }

    pub fn promise(&self, tid: &TxnId) -> Option<Arc<Promise>> {
        match self.state.lock().decided.get(tid) {
            Some(Decision::Committed(p)) => Some(p.clone()),
            _ => None,
        }
    }

    pub fn is_aborted(&self, tid: &TxnId) -> bool {
        matches!(self.state.lock().decided.get(tid), Some(Decision::Aborted))
    }

    /// A committed transaction, as signed by its client.
    pub fn committed_txn(&self, tid: &TxnId) -> Option<Arc<Transaction>> {
        self.state.lock().archive.get(tid).cloned()
    }

    pub fn prepared_count(&self) -> usize {
        self.state.lock().prepared.len()
    }

    pub fn pending_versions(&self) -> usize {
        self.state.lock().cdm.len()
    }

    /// Persists every block promised so far, in order. Blocks whose
    /// persistence fails stay in the map and are retried next tick.
    pub fn persist_tick(&self, now_ms: u64) -> Result<Vec<(DataBlock, LedgerDigest)>, TxnError> {
        let _one = self.persist.lock();
        let (first, last) = {
            let mut st = self.state.lock();
            let Some(max) = st.cdm.max_block() else {
                return Ok(Vec::new());
            };
            st.sealed = st.sealed.max(max);
            (self.ledger.head_block() + 1, st.sealed)
        };
        let mut out = Vec::new();
        for b in first..=last {
            let (batch, ts) = {
                let st = self.state.lock();
                (st.cdm.batch(b), st.last_timestamp.max(now_ms))
            };
            if batch.is_empty() {
                return Err(TxnError::Corrupt(format!("no writes promised to block {b}")));
            }
            let made = self.ledger.append_block(WriteBatch::new(batch), ts)?;
            let mut st = self.state.lock();
            st.cdm.remove_block(b);
            st.last_timestamp = ts;
            out.push(made);
        }
        Ok(out)
    }

    /// Persists immediately whatever is pending.
    pub fn flush(&self) -> Result<Vec<(DataBlock, LedgerDigest)>, TxnError> {
        self.persist_tick(now_ms())
    }

    /// Starts the background persister. Dropping or stopping the handle
    /// runs one final tick.
    pub fn spawn_persister(self: &Arc<Self>) -> Persister {
        let (tx, rx) = bounded::<()>(1);
        let me = self.clone();
        let every = Duration::from_millis(self.config.persist_interval_ms.max(1));
        let thread = std::thread::Builder::new()
            .name("persister".into())
            .spawn(move || loop {
                let stop = !matches!(rx.recv_timeout(every), Err(RecvTimeoutError::Timeout));
                if let Err(e) = me.flush() {
                    log::warn!("persist tick failed: {e}");
                }
                if stop {
                    break;
                }
            })
            .expect("spawn persister");
        Persister {
            stop: Some(tx),
            thread: Some(thread),
        }
    }

    /// Keys currently locked by prepared transactions.
    pub fn locked_keys(&self) -> HashSet<Vec<u8>> {
        self.state.lock().locks.keys().cloned().collect()
    }
}

pub struct Persister {
    stop: Option<Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Persister {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Persister {
    fn drop(&mut self) {
        self.shutdown();
    }
}
