use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::ledger::{BatchWrite, TxnId};

#[derive(Debug, Clone)]
struct Pending {
    block_no: u64,
    value: Vec<u8>,
    tid: TxnId,
}

/// Committed writes waiting for their block. Each key's versions are kept
/// in block order; every version already carries the block it will land
/// in, so persisting is a matter of draining blocks in order.
#[derive(Debug, Default)]
pub struct CommittedDataMap {
    by_key: HashMap<Vec<u8>, VecDeque<Pending>>,
    by_block: BTreeMap<u64, Vec<Vec<u8>>>,
}

impl CommittedDataMap {
    pub fn insert(&mut self, key: Vec<u8>, value: Vec<u8>, tid: TxnId, block_no: u64) {
        let versions = self.by_key.entry(key.clone()).or_default();
        assert!(
            versions.back().is_none_or(|p| p.block_no < block_no),
            "versions of a key must land in increasing blocks"
        );
        versions.push_back(Pending { block_no, value, tid });
        self.by_block.entry(block_no).or_default().push(key);
    }

    /// Newest unpersisted version of `key` and its block.
    pub fn latest(&self, key: &[u8]) -> Option<(&[u8], u64)> {
        self.by_key
            .get(key)
            .and_then(|v| v.back())
            .map(|p| (p.value.as_slice(), p.block_no))
    }

    pub fn max_block(&self) -> Option<u64> {
        self.by_block.keys().next_back().copied()
    }

    /// Writes destined for `block_no`.
    pub fn batch(&self, block_no: u64) -> Vec<BatchWrite> {
        let Some(keys) = self.by_block.get(&block_no) else {
            return Vec::new();
        };
        keys.iter()
            .map(|k| {
                let p = self.by_key[k]
                    .iter()
                    .find(|p| p.block_no == block_no)
                    .expect("indexed version present");
                BatchWrite {
                    key: k.clone(),
                    value: p.value.clone(),
                    tid: p.tid,
                }
            })
            .collect()
    }

    /// Drops the versions of a block that has been persisted.
    pub fn remove_block(&mut self, block_no: u64) {
        for k in self.by_block.remove(&block_no).unwrap_or_default() {
            let versions = self.by_key.get_mut(&k).expect("indexed key present");
            let front = versions.pop_front().expect("indexed version present");
            debug_assert_eq!(front.block_no, block_no, "blocks persist in order");
            if versions.is_empty() {
                self.by_key.remove(&k);
            }
        }
    }

    /// Number of pending versions.
    pub fn len(&self) -> usize {
        self.by_block.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_block.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(n: u64) -> TxnId {
        TxnId {
            client_id: 1,
            client_ts: n,
            counter: 0,
        }
    }

    #[test]
    fn layered_versions_drain_in_block_order() {
        let mut m = CommittedDataMap::default();
        m.insert(b"a".to_vec(), b"a1".to_vec(), tid(1), 1);
        m.insert(b"b".to_vec(), b"b1".to_vec(), tid(1), 1);
        m.insert(b"b".to_vec(), b"b2".to_vec(), tid(2), 2);
        assert_eq!(m.latest(b"b"), Some((&b"b2"[..], 2)));
        assert_eq!(m.batch(1).len(), 2);
        assert_eq!(m.batch(2)[0].value, b"b2");
        m.remove_block(1);
        assert_eq!(m.latest(b"a"), None);
        assert_eq!(m.len(), 1);
        m.remove_block(2);
        assert!(m.is_empty());
    }
}
