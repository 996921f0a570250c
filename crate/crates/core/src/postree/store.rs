//! Content-addressed node storage.
//!
//! The on-disk form is an append-only log behind a 4-byte magic and a 4-byte
//! version. Each record is `hash(32) ‖ len(u32 BE) ‖ bytes`, where `hash` is
//! the BLAKE2b-256 digest of `bytes`. Records double as their own checksum:
//! on open, the log is replayed until the first record whose digest does not
//! match, and the file is truncated there.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::node::PosNode;
use crate::codec::DecodeError;
use crate::hash::{Hash, HASH_LEN};

pub const NODE_LOG_MAGIC: &[u8; 4] = b"GLND";
pub const NODE_LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("injected storage fault after {0} writes")]
    Injected(u64),
    #[error("stored record {0} is not a valid node: {1}")]
    Corrupt(Hash, DecodeError),
    #[error("bad log header in {0}")]
    BadHeader(PathBuf),
}

/// Hash-keyed storage for tree nodes and other immutable blobs (data blocks
/// live here too). Writes of already-present content are no-ops.
pub trait NodeStore: Send + Sync {
    fn get_blob(&self, hash: &Hash) -> Result<Option<Arc<Vec<u8>>>, StoreError>;

    /// Stores `bytes` under their digest. Returns whether this was a new
    /// record.
    fn put_blob_with_hash(&self, hash: Hash, bytes: Vec<u8>) -> Result<bool, StoreError>;

    fn get_node(&self, hash: &Hash) -> Result<Option<Arc<PosNode>>, StoreError>;

    fn put_node_with_hash(&self, hash: Hash, node: PosNode, bytes: Vec<u8>) -> Result<bool, StoreError>;

    fn contains(&self, hash: &Hash) -> bool;

    /// Number of records newly written through this handle.
    fn write_count(&self) -> u64;

    /// Makes all previous writes durable.
    fn sync(&self) -> Result<(), StoreError> {
        Ok(())
    }
}

impl dyn NodeStore {
    pub fn put_node(&self, node: PosNode) -> Result<Hash, StoreError> {
        let bytes = node.encode();
        let hash = Hash::of(&bytes);
        self.put_node_with_hash(hash, node, bytes)?;
        Ok(hash)
    }

    pub fn put_blob(&self, bytes: Vec<u8>) -> Result<Hash, StoreError> {
        let hash = Hash::of(&bytes);
        self.put_blob_with_hash(hash, bytes)?;
        Ok(hash)
    }
}

#[derive(Default)]
struct Records {
    nodes: HashMap<Hash, Arc<PosNode>>,
    blobs: HashMap<Hash, Arc<Vec<u8>>>,
}

impl Records {
    fn contains(&self, h: &Hash) -> bool {
        self.nodes.contains_key(h) || self.blobs.contains_key(h)
    }
}

/// Volatile store used by tests, auditors and proof verification.
#[derive(Default)]
pub struct MemStore {
    records: RwLock<Records>,
    writes: AtomicU64,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shared() -> Arc<dyn NodeStore> {
        Arc::new(Self::new())
    }

    pub fn len(&self) -> usize {
        let r = self.records.read();
        r.nodes.len() + r.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NodeStore for MemStore {
    fn get_blob(&self, hash: &Hash) -> Result<Option<Arc<Vec<u8>>>, StoreError> {
        let r = self.records.read();
        if let Some(b) = r.blobs.get(hash) {
            return Ok(Some(b.clone()));
        }
        Ok(r.nodes.get(hash).map(|n| Arc::new(n.encode())))
    }

    fn put_blob_with_hash(&self, hash: Hash, bytes: Vec<u8>) -> Result<bool, StoreError> {
        let mut r = self.records.write();
        if r.contains(&hash) {
            return Ok(false);
        }
        r.blobs.insert(hash, Arc::new(bytes));
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }

    fn get_node(&self, hash: &Hash) -> Result<Option<Arc<PosNode>>, StoreError> {
        Ok(self.records.read().nodes.get(hash).cloned())
    }

    fn put_node_with_hash(&self, hash: Hash, node: PosNode, _bytes: Vec<u8>) -> Result<bool, StoreError> {
        let mut r = self.records.write();
        if r.contains(&hash) {
            return Ok(false);
        }
        r.nodes.insert(hash, Arc::new(node));
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }

    fn contains(&self, hash: &Hash) -> bool {
        self.records.read().contains(hash)
    }

    fn write_count(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }
}

/// Durable store: an in-memory index in front of an append-only log.
pub struct FileStore {
    path: PathBuf,
    mem: MemStore,
    log: Mutex<BufWriter<File>>,
    truncated_bytes: u64,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<FileStore, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;

        let mem = MemStore::new();
        let header_len = 8;
        if buf.is_empty() {
            file.write_all(NODE_LOG_MAGIC)?;
            file.write_all(&NODE_LOG_VERSION.to_be_bytes())?;
            file.sync_all()?;
            buf.extend_from_slice(NODE_LOG_MAGIC);
            buf.extend_from_slice(&NODE_LOG_VERSION.to_be_bytes());
        }
        if buf.len() < header_len
            || &buf[..4] != NODE_LOG_MAGIC
            || u32::from_be_bytes(buf[4..8].try_into().unwrap()) != NODE_LOG_VERSION
        {
            return Err(StoreError::BadHeader(path));
        }

        let mut pos = header_len;
        {
            let mut recs = mem.records.write();
            while pos + HASH_LEN + 4 <= buf.len() {
                let hash = Hash(buf[pos..pos + HASH_LEN].try_into().unwrap());
                let len =
                    u32::from_be_bytes(buf[pos + HASH_LEN..pos + HASH_LEN + 4].try_into().unwrap()) as usize;
                let start = pos + HASH_LEN + 4;
                if start + len > buf.len() {
                    break;
                }
                let bytes = &buf[start..start + len];
                if Hash::of(bytes) != hash {
                    break;
                }
                match PosNode::decode(bytes) {
                    Ok(node) => {
                        recs.nodes.insert(hash, Arc::new(node));
                    }
                    Err(_) => {
                        recs.blobs.insert(hash, Arc::new(bytes.to_vec()));
                    }
                }
                pos = start + len;
            }
        }
        let truncated_bytes = (buf.len() - pos) as u64;
        if truncated_bytes > 0 {
            file.set_len(pos as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(pos as u64))?;
        Ok(FileStore {
            path,
            mem,
            log: Mutex::new(BufWriter::new(file)),
            truncated_bytes,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Bytes discarded from a torn tail when the log was opened.
    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }

    fn append(&self, hash: &Hash, bytes: &[u8]) -> Result<(), StoreError> {
        let mut log = self.log.lock();
        log.write_all(hash.as_bytes())?;
        log.write_all(&(bytes.len() as u32).to_be_bytes())?;
        log.write_all(bytes)?;
        Ok(())
    }
}

impl NodeStore for FileStore {
    fn get_blob(&self, hash: &Hash) -> Result<Option<Arc<Vec<u8>>>, StoreError> {
        self.mem.get_blob(hash)
    }

    fn put_blob_with_hash(&self, hash: Hash, bytes: Vec<u8>) -> Result<bool, StoreError> {
        if self.mem.contains(&hash) {
            return Ok(false);
        }
        self.append(&hash, &bytes)?;
        self.mem.put_blob_with_hash(hash, bytes)
    }

    fn get_node(&self, hash: &Hash) -> Result<Option<Arc<PosNode>>, StoreError> {
        self.mem.get_node(hash)
    }

    fn put_node_with_hash(&self, hash: Hash, node: PosNode, bytes: Vec<u8>) -> Result<bool, StoreError> {
        if self.mem.contains(&hash) {
            return Ok(false);
        }
        self.append(&hash, &bytes)?;
        self.mem.put_node_with_hash(hash, node, bytes)
    }

    fn contains(&self, hash: &Hash) -> bool {
        self.mem.contains(hash)
    }

    fn write_count(&self) -> u64 {
        self.mem.write_count()
    }

    fn sync(&self) -> Result<(), StoreError> {
        let mut log = self.log.lock();
        log.flush()?;
        log.get_ref().sync_data()?;
        Ok(())
    }
}

/// Wraps a store and fails every new write once `budget` new writes have
/// gone through. Used to simulate a crash in the middle of a tree update.
pub struct FaultyStore {
    inner: Arc<dyn NodeStore>,
    budget: AtomicU64,
    armed: std::sync::atomic::AtomicBool,
    passed: AtomicU64,
}

impl FaultyStore {
    pub fn new(inner: Arc<dyn NodeStore>) -> Self {
        FaultyStore {
            inner,
            budget: AtomicU64::new(u64::MAX),
            armed: std::sync::atomic::AtomicBool::new(false),
            passed: AtomicU64::new(0),
        }
    }

    /// Allows `n` more new writes, then fails.
    pub fn fail_after(&self, n: u64) {
        self.passed.store(0, Ordering::SeqCst);
        self.budget.store(n, Ordering::SeqCst);
        self.armed.store(true, Ordering::SeqCst);
    }

    pub fn disarm(&self) {
        self.armed.store(false, Ordering::SeqCst);
    }

    fn admit(&self, hash: &Hash) -> Result<(), StoreError> {
        if !self.armed.load(Ordering::SeqCst) || self.inner.contains(hash) {
            return Ok(());
        }
        let passed = self.passed.fetch_add(1, Ordering::SeqCst);
        if passed >= self.budget.load(Ordering::SeqCst) {
            return Err(StoreError::Injected(passed));
        }
        Ok(())
    }
}

impl NodeStore for FaultyStore {
    fn get_blob(&self, hash: &Hash) -> Result<Option<Arc<Vec<u8>>>, StoreError> {
        self.inner.get_blob(hash)
    }

    fn put_blob_with_hash(&self, hash: Hash, bytes: Vec<u8>) -> Result<bool, StoreError> {
        self.admit(&hash)?;
        self.inner.put_blob_with_hash(hash, bytes)
    }

    fn get_node(&self, hash: &Hash) -> Result<Option<Arc<PosNode>>, StoreError> {
        self.inner.get_node(hash)
    }

    fn put_node_with_hash(&self, hash: Hash, node: PosNode, bytes: Vec<u8>) -> Result<bool, StoreError> {
        self.admit(&hash)?;
        self.inner.put_node_with_hash(hash, node, bytes)
    }

    fn contains(&self, hash: &Hash) -> bool {
        self.inner.contains(hash)
    }

    fn write_count(&self) -> u64 {
        self.inner.write_count()
    }

    fn sync(&self) -> Result<(), StoreError> {
        self.inner.sync()
    }
}
