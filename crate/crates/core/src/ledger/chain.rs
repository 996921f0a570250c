use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::block::{block_key, BatchWrite, DataBlock, LedgerDigest, TxnId, WriteBatch};
use super::blockmap::BlockMap;
use super::wal::{Wal, WalRecord};
use super::LedgerError;
use crate::hash::Hash;
use crate::postree::{ChunkConfig, Entry, FileStore, MemStore, NodeStore, PosNode, PosTree, TreeRoot};

pub const NODES_FILE: &str = "nodes.log";
pub const WAL_FILE: &str = "wal.log";
pub const BLOCK_MAP_FILE: &str = "blocks.map";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub state_chunking: ChunkConfig,
    pub block_chunking: ChunkConfig,
}

/// Test hook: abort the persist pipeline at a fixed step, as a crash would.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// The batch record is durable; no tree has been touched.
    AfterWal,
    /// Both trees and the block are written; the block map is not.
    BeforeBlockMap,
}

/// Selects a historical state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum At {
    Latest,
    Block(u64),
    /// Milliseconds since the epoch; resolves to the last block stamped at
    /// or before it.
    Time(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryStatus {
    Clean,
    RecoveredWithTruncation,
}

#[derive(Debug, Default)]
pub struct RecoveryReport {
    pub wal_truncated_bytes: u64,
    pub nodes_truncated_bytes: u64,
    pub block_map_truncated_bytes: u64,
    /// Blocks rebuilt from batch records.
    pub replayed_blocks: u64,
    /// Of those, blocks whose data block was taken from the block map.
    pub reused_blocks: u64,
    /// The full surviving WAL, for the transaction manager.
    pub records: Vec<WalRecord>,
}

impl RecoveryReport {
    pub fn status(&self) -> RecoveryStatus {
        if self.wal_truncated_bytes + self.nodes_truncated_bytes + self.block_map_truncated_bytes > 0 {
            RecoveryStatus::RecoveredWithTruncation
        } else {
            RecoveryStatus::Clean
        }
    }
}

struct Head {
    block_no: u64,
    state: TreeRoot,
    upper: TreeRoot,
    /// Block tree root after each block; index 0 is genesis.
    upper_roots: Vec<Hash>,
    /// Keys written by each block and the transaction that wrote them.
    manifests: Vec<Vec<(Vec<u8>, TxnId)>>,
    /// Block of the latest persisted version of each key.
    versions: HashMap<Vec<u8>, u64>,
}

/// The two-level ledger of one shard.
pub struct Ledger {
    store: Arc<dyn NodeStore>,
    lower: PosTree,
    upper: PosTree,
    wal: Arc<Wal>,
    block_map: Mutex<BlockMap>,
    head: RwLock<Head>,
    persist: Mutex<()>,
    crash: Mutex<Option<CrashPoint>>,
}

impl Ledger {
    pub fn in_memory(cfg: LedgerConfig) -> Ledger {
        Self::assemble(MemStore::shared(), Arc::new(Wal::memory()), BlockMap::memory(), cfg)
    }

    /// Opens (or creates) a ledger directory and recovers it.
    pub fn open(dir: impl AsRef<Path>, cfg: LedgerConfig) -> Result<(Ledger, RecoveryReport), LedgerError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let store = FileStore::open(dir.join(NODES_FILE))?;
        let nodes_truncated = store.truncated_bytes();
        let (ledger, mut report) = Self::open_with_store(dir, cfg, Arc::new(store))?;
        report.nodes_truncated_bytes = nodes_truncated;
        Ok((ledger, report))
    }

    /// Like [`Ledger::open`] but with a caller-supplied node store, which
    /// should be backed by `dir/nodes.log`.
    pub fn open_with_store(
        dir: impl AsRef<Path>,
        cfg: LedgerConfig,
        store: Arc<dyn NodeStore>,
    ) -> Result<(Ledger, RecoveryReport), LedgerError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (wal, replay) = Wal::open(dir.join(WAL_FILE))?;
        let block_map = BlockMap::open(dir.join(BLOCK_MAP_FILE))?;
        let mut report = RecoveryReport {
            wal_truncated_bytes: replay.truncated_bytes,
            block_map_truncated_bytes: block_map.truncated_bytes(),
            ..Default::default()
        };
        let ledger = Self::assemble(store, Arc::new(wal), block_map, cfg);

        let mut batches: BTreeMap<u64, (u64, &[BatchWrite])> = BTreeMap::new();
        for rec in &replay.records {
            if let WalRecord::Batch {
                block_no,
                timestamp_ms,
                writes,
            } = rec
            {
                // A retried block is logged again; the last attempt wins.
                batches.insert(*block_no, (*timestamp_ms, writes));
            }
        }
        for (block_no, (ts, writes)) in batches {
            let expected = ledger.head_block() + 1;
            if block_no != expected {
                return Err(LedgerError::Corrupt(format!(
                    "WAL batch for block {block_no}, expected {expected}"
                )));
            }
            let reuse = ledger.block_map.lock().get(block_no);
            report.reused_blocks += reuse.is_some() as u64;
            ledger.apply(block_no, ts, writes.to_vec(), reuse)?;
            report.replayed_blocks += 1;
        }
        let mapped = ledger.block_map.lock().len();
        if mapped > ledger.head_block() {
            return Err(LedgerError::Corrupt(format!(
                "block map names {mapped} blocks but the WAL only holds {}",
                ledger.head_block()
            )));
        }
        report.records = replay.records;
        Ok((ledger, report))
    }

    fn assemble(store: Arc<dyn NodeStore>, wal: Arc<Wal>, block_map: BlockMap, cfg: LedgerConfig) -> Ledger {
        Ledger {
            lower: PosTree::new(store.clone(), cfg.state_chunking),
            upper: PosTree::new(store.clone(), cfg.block_chunking),
            store,
            wal,
            block_map: Mutex::new(block_map),
            head: RwLock::new(Head {
                block_no: 0,
                state: TreeRoot::empty(),
                upper: TreeRoot::empty(),
                upper_roots: vec![Hash::empty()],
                manifests: Vec::new(),
                versions: HashMap::new(),
            }),
            persist: Mutex::new(()),
            crash: Mutex::new(None),
        }
    }

    pub fn store(&self) -> &Arc<dyn NodeStore> {
        &self.store
    }

    pub fn state_tree(&self) -> &PosTree {
        &self.lower
    }

    pub fn block_tree(&self) -> &PosTree {
        &self.upper
    }

    pub fn wal(&self) -> &Arc<Wal> {
        &self.wal
    }

    pub fn inject_crash(&self, point: Option<CrashPoint>) {
        *self.crash.lock() = point;
    }

    fn maybe_crash(&self, here: CrashPoint) -> Result<(), LedgerError> {
        let mut c = self.crash.lock();
        if *c == Some(here) {
            *c = None;
            return Err(LedgerError::InjectedCrash(here));
        }
        Ok(())
    }

    pub fn digest(&self) -> LedgerDigest {
        let h = self.head.read();
        LedgerDigest {
            digest: h.upper.root_hash,
            block_no: h.block_no,
        }
    }

    pub fn head_block(&self) -> u64 {
        self.head.read().block_no
    }

    /// State tree after the latest block.
    pub fn state_root(&self) -> TreeRoot {
        self.head.read().state
    }

    /// The digest this ledger published after `block_no`.
    pub fn digest_at(&self, block_no: u64) -> Option<LedgerDigest> {
        let h = self.head.read();
        h.upper_roots.get(block_no as usize).map(|d| LedgerDigest {
            digest: *d,
            block_no,
        })
    }

    pub fn is_known_digest(&self, d: &LedgerDigest) -> bool {
        self.digest_at(d.block_no).is_some_and(|x| x == *d)
    }

    pub fn block_tree_at(&self, block_no: u64) -> Option<TreeRoot> {
        self.digest_at(block_no).map(|d| TreeRoot {
            root_hash: d.digest,
            entry_count: block_no,
        })
    }

    /// Keys written in `block_no` with their writers.
    pub fn manifest(&self, block_no: u64) -> Option<Vec<(Vec<u8>, TxnId)>> {
        let h = self.head.read();
        block_no
            .checked_sub(1)
            .and_then(|i| h.manifests.get(i as usize))
            .cloned()
    }

    /// Block of the latest persisted version of `key`; 0 if never written.
    pub fn version_of(&self, key: &[u8]) -> u64 {
        self.head.read().versions.get(key).copied().unwrap_or(0)
    }

    /// Persists one block: logs the batch, updates the state tree, stores
    /// the data block, updates the block tree and finally records the block
    /// in the block map. A failure at any step leaves the in-memory ledger
    /// unchanged; the logged batch is replayed by recovery.
    pub fn append_block(&self, batch: WriteBatch, now_ms: u64) -> Result<(DataBlock, LedgerDigest), LedgerError> {
        let _one_persister = self.persist.lock();
        if batch.is_empty() {
            return Err(LedgerError::InvalidBatch("empty batch".into()));
        }
        let block_no = self.head_block() + 1;
        self.wal.append(
            &WalRecord::Batch {
                block_no,
                timestamp_ms: now_ms,
                writes: batch.writes.clone(),
            },
            true,
        )?;
        self.maybe_crash(CrashPoint::AfterWal)?;
        self.apply(block_no, now_ms, batch.writes, None)
    }

    fn apply(
        &self,
        block_no: u64,
        timestamp_ms: u64,
        mut writes: Vec<BatchWrite>,
        reuse: Option<Hash>,
    ) -> Result<(DataBlock, LedgerDigest), LedgerError> {
        writes.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = writes.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(LedgerError::InvalidBatch(format!(
                "key {} appears twice",
                String::from_utf8_lossy(&w[0].key)
            )));
        }
        let (state, upper) = {
            let h = self.head.read();
            (h.state, h.upper)
        };

        let mut entries = Vec::with_capacity(writes.len());
        for w in &writes {
            let found = self.lower.lookup(&state, &w.key)?;
            let prev = found
                .entry
                .is_some()
                .then(|| found.path.last().expect("non-empty path").hash());
            entries.push(Entry::new(w.key.clone(), w.value.clone()).with_prev(prev));
        }
        let new_state = self.lower.update(&state, &entries)?;

        let txn_ids = WriteBatch::new(writes.clone()).txn_ids();
        let block = match reuse {
            Some(h) => {
                let bytes = self
                    .store
                    .get_blob(&h)?
                    .ok_or_else(|| LedgerError::Corrupt(format!("mapped block {block_no} ({h}) missing")))?;
                let b = DataBlock::decode(&bytes)?;
                if b.block_no != block_no
                    || b.state_root != new_state.root_hash
                    || b.state_keys != new_state.entry_count
                    || b.timestamp_ms != timestamp_ms
                    || b.txn_ids != txn_ids
                {
                    return Err(LedgerError::Corrupt(format!(
                        "mapped block {block_no} disagrees with its logged batch"
                    )));
                }
                b
            }
            None => DataBlock {
                block_no,
                timestamp_ms,
                txn_ids,
                state_root: new_state.root_hash,
                state_keys: new_state.entry_count,
            },
        };
        let block_hash = self.store.put_blob(block.encode())?;
        let new_upper = self.upper.update(
            &upper,
            &[Entry::new(block_key(block_no).to_vec(), block_hash.as_bytes().to_vec())],
        )?;
        self.store.sync()?;
        self.maybe_crash(CrashPoint::BeforeBlockMap)?;
        self.block_map.lock().append(block_no, block_hash)?;

        let mut h = self.head.write();
        h.block_no = block_no;
        h.state = new_state;
        h.upper = new_upper;
        h.upper_roots.push(new_upper.root_hash);
        for w in &writes {
            h.versions.insert(w.key.clone(), block_no);
        }
        h.manifests
            .push(writes.into_iter().map(|w| (w.key, w.tid)).collect());
        let digest = LedgerDigest {
            digest: new_upper.root_hash,
            block_no,
        };
        Ok((block, digest))
    }

    /// Fetches a block through the latest block tree, with the root-to-leaf
    /// path that authenticates it.
    pub fn get_block(&self, block_no: u64) -> Result<(DataBlock, Vec<Arc<PosNode>>), LedgerError> {
        let upper = self.head.read().upper;
        self.get_block_in(&upper, block_no)
    }

    /// Fetches a block through the block tree of an earlier digest.
    pub fn get_block_in(&self, upper: &TreeRoot, block_no: u64) -> Result<(DataBlock, Vec<Arc<PosNode>>), LedgerError> {
        if block_no == 0 || block_no > upper.entry_count {
            return Err(LedgerError::BlockNotFound(block_no));
        }
        let found = self.upper.lookup(upper, &block_key(block_no))?;
        let entry = found.entry.ok_or(LedgerError::BlockNotFound(block_no))?;
        let hash = Hash(
            entry
                .value
                .as_slice()
                .try_into()
                .map_err(|_| LedgerError::Corrupt(format!("block {block_no} leaf value is not a hash")))?,
        );
        let bytes = self
            .store
            .get_blob(&hash)?
            .ok_or_else(|| LedgerError::Corrupt(format!("block {block_no} ({hash}) missing")))?;
        Ok((DataBlock::decode(&bytes)?, found.path))
    }

    pub fn block(&self, block_no: u64) -> Result<DataBlock, LedgerError> {
        Ok(self.get_block(block_no)?.0)
    }

    fn state_at_block(block: &DataBlock) -> TreeRoot {
        TreeRoot {
            root_hash: block.state_root,
            entry_count: block.state_keys,
        }
    }

    /// Resolves `at` to a block number; `None` when it precedes block 1.
    pub fn resolve(&self, at: At) -> Result<Option<u64>, LedgerError> {
        let head = self.head_block();
        match at {
            At::Latest => Ok((head > 0).then_some(head)),
            At::Block(b) if b > head => Err(LedgerError::BlockNotFound(b)),
            At::Block(b) => Ok((b > 0).then_some(b)),
            At::Time(t) => {
                // Greatest block stamped at or before t, by binary search over
                // the block tree.
                let (mut lo, mut hi) = (0u64, head);
                while lo < hi {
                    let mid = lo + (hi - lo).div_ceil(2);
                    if self.block(mid)?.timestamp_ms <= t {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                Ok((lo > 0).then_some(lo))
            }
        }
    }

    /// Value of `key` as of `at`, with the block that wrote that version.
    pub fn get_versioned(&self, key: &[u8], at: At) -> Result<Option<(Vec<u8>, u64)>, LedgerError> {
        let Some(b) = self.resolve(at)? else {
            return Ok(None);
        };
        let state = Self::state_at_block(&self.block(b)?);
        let Some(entry) = self.lower.get(&state, key)? else {
            return Ok(None);
        };
        let version = if b == self.head_block() {
            self.version_of(key)
        } else {
            self.version_block(key, &entry, b)?
        };
        Ok(Some((entry.value, version)))
    }

    /// Smallest block in `1..=upto` whose state already holds `entry`.
    /// Entries carry their predecessor's leaf hash, so a version's entry is
    /// unique and present in a contiguous run of blocks.
    fn version_block(&self, key: &[u8], entry: &Entry, upto: u64) -> Result<u64, LedgerError> {
        let (mut lo, mut hi) = (1u64, upto);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let state = Self::state_at_block(&self.block(mid)?);
            if self.lower.get(&state, key)?.as_ref() == Some(entry) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    }

    pub fn get_latest(&self, key: &[u8]) -> Result<Option<(Vec<u8>, u64)>, LedgerError> {
        let state = self.state_root();
        Ok(self
            .lower
            .get(&state, key)?
            .map(|e| (e.value, self.version_of(key))))
    }

    /// Up to `limit` values of `key`, newest first, found by following the
    /// chain of previous-version pointers from the latest state.
    pub fn history(&self, key: &[u8], limit: usize) -> Result<Vec<Vec<u8>>, LedgerError> {
        let state = self.state_root();
        let mut out = Vec::new();
        let mut cur = self.lower.get(&state, key)?;
        while let Some(entry) = cur {
            if out.len() == limit {
                break;
            }
            out.push(entry.value);
            cur = match entry.prev_hash {
                None => None,
                Some(h) => {
                    let leaf = self.lower.load(&h)?;
                    let found = leaf
                        .entries()
                        .binary_search_by(|e| e.key.as_slice().cmp(key))
                        .map_err(|_| LedgerError::Corrupt(format!("version chain of key broken at {h}")))?;
                    Some(leaf.entries()[found].clone())
                }
            };
        }
        Ok(out)
    }

    /// Every (key, tid) pair persisted so far.
    pub fn persisted_writes(&self) -> HashSet<(Vec<u8>, TxnId)> {
        self.head
            .read()
            .manifests
            .iter()
            .flatten()
            .cloned()
            .collect()
    }
}
