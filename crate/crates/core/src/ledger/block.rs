use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};
use crate::hash::{Hash, HASH_LEN};

/// Transaction identifier: issuing client, client clock at `begin`, and a
/// per-client counter that breaks ties within one millisecond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxnId {
    pub client_id: u64,
    pub client_ts: u64,
    pub counter: u64,
}

impl TxnId {
    pub const ENCODED_LEN: usize = 24;

    pub fn encode_into(&self, w: &mut Writer) {
        w.u64(self.client_id).u64(self.client_ts).u64(self.counter);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<TxnId, DecodeError> {
        Ok(TxnId {
            client_id: r.u64()?,
            client_ts: r.u64()?,
            counter: r.u64()?,
        })
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.client_id, self.client_ts, self.counter)
    }
}

/// Upper-tree key for a block number.
pub fn block_key(block_no: u64) -> [u8; 8] {
    block_no.to_be_bytes()
}

/// One ledger block. The upper tree maps `block_key(block_no)` to the hash of
/// this block's encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataBlock {
    pub block_no: u64,
    pub timestamp_ms: u64,
    pub txn_ids: Vec<TxnId>,
    pub state_root: Hash,
    /// Number of keys in the state tree after this block.
    pub state_keys: u64,
}

impl DataBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(60 + self.txn_ids.len() * TxnId::ENCODED_LEN);
        w.u64(self.block_no)
            .u64(self.timestamp_ms)
            .raw(self.state_root.as_bytes())
            .u64(self.state_keys)
            .count(self.txn_ids.len());
        for t in &self.txn_ids {
            t.encode_into(&mut w);
        }
        w.into_bytes()
    }

    pub fn hash(&self) -> Hash {
        Hash::of(&self.encode())
    }

    pub fn decode(bytes: &[u8]) -> Result<DataBlock, DecodeError> {
        let mut r = Reader::new(bytes);
        let block_no = r.u64()?;
        let timestamp_ms = r.u64()?;
        let state_root = Hash(r.array::<HASH_LEN>()?);
        let state_keys = r.u64()?;
        let n = r.count(TxnId::ENCODED_LEN)?;
        let mut txn_ids = Vec::with_capacity(n);
        for _ in 0..n {
            txn_ids.push(TxnId::decode_from(&mut r)?);
        }
        r.finish()?;
        if block_no == 0 {
            return Err(DecodeError::Invalid("block number 0 is reserved for genesis"));
        }
        Ok(DataBlock {
            block_no,
            timestamp_ms,
            txn_ids,
            state_root,
            state_keys,
        })
    }
}

/// Public commitment to a shard's whole history: the block tree root and
/// the greatest block number in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LedgerDigest {
    pub digest: Hash,
    pub block_no: u64,
}

impl LedgerDigest {
    pub const ENCODED_LEN: usize = HASH_LEN + 8;

    pub fn genesis() -> LedgerDigest {
        LedgerDigest {
            digest: Hash::empty(),
            block_no: 0,
        }
    }

    pub fn encode_into(&self, w: &mut Writer) {
        w.raw(self.digest.as_bytes()).u64(self.block_no);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<LedgerDigest, DecodeError> {
        Ok(LedgerDigest {
            digest: Hash(r.array::<HASH_LEN>()?),
            block_no: r.u64()?,
        })
    }
}

impl fmt::Display for LedgerDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.digest, self.block_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchWrite {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub tid: TxnId,
}

impl BatchWrite {
    pub fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.key).bytes(&self.value);
        self.tid.encode_into(w);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<BatchWrite, DecodeError> {
        Ok(BatchWrite {
            key: r.vec()?,
            value: r.vec()?,
            tid: TxnId::decode_from(r)?,
        })
    }
}

/// Writes destined for one block; keys are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteBatch {
    pub writes: Vec<BatchWrite>,
}

impl WriteBatch {
    pub fn new(writes: Vec<BatchWrite>) -> Self {
        WriteBatch { writes }
    }

    pub fn is_empty(&self) -> bool {
        self.writes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.writes.len()
    }

    /// Distinct transaction ids in first-appearance order.
    pub fn txn_ids(&self) -> Vec<TxnId> {
        let mut seen = std::collections::HashSet::new();
        self.writes
            .iter()
            .filter(|w| seen.insert(w.tid))
            .map(|w| w.tid)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DataBlock {
        DataBlock {
            block_no: 7,
            timestamp_ms: 1_700_000_000_123,
            txn_ids: vec![
                TxnId {
                    client_id: 1,
                    client_ts: 2,
                    counter: 3,
                },
                TxnId {
                    client_id: 9,
                    client_ts: 8,
                    counter: 7,
                },
            ],
            state_root: Hash::of(b"state"),
            state_keys: 12,
        }
    }

    #[test]
    fn block_round_trip() {
        let b = sample();
        let bytes = b.encode();
        assert_eq!(bytes.len(), 8 + 8 + 32 + 8 + 4 + 48);
        assert_eq!(DataBlock::decode(&bytes).unwrap(), b);
    }

    #[test]
    fn block_decode_is_strict() {
        let mut bytes = sample().encode();
        bytes.push(0);
        assert!(DataBlock::decode(&bytes).is_err());
        let bytes = sample().encode();
        assert!(DataBlock::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut zero = sample();
        zero.block_no = 0;
        assert!(DataBlock::decode(&zero.encode()).is_err());
    }

    #[test]
    fn txn_ids_dedupe_in_order() {
        let t = |c| TxnId {
            client_id: c,
            client_ts: 0,
            counter: 0,
        };
        let w = |k: &str, c| BatchWrite {
            key: k.into(),
            value: vec![],
            tid: t(c),
        };
        let b = WriteBatch::new(vec![w("a", 2), w("b", 1), w("c", 2)]);
        assert_eq!(b.txn_ids(), vec![t(2), t(1)]);
    }
}
