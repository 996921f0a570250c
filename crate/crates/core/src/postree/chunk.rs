//! Content-defined chunking of a sorted item sequence into tree nodes.
//!
//! Each item is serialized and hashed with a polynomial hash modulo the
//! Mersenne prime 2^61 - 1. A node boundary follows an item when the low
//! `pattern_bits` bits of that hash are zero and the node already holds
//! `min_entries` items, or unconditionally once it holds `max_entries`.
//! Boundary decisions therefore depend only on the items since the previous
//! boundary, which is what makes the tree shape independent of insertion
//! order.

use serde::{Deserialize, Serialize};

use super::node::{Entry, LevelItem, PosNode};
use super::TreeError;
use crate::codec::Writer;

const MODULUS: u64 = (1 << 61) - 1;
const BASE: u64 = 0x1_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub pattern_bits: u8,
    pub min_entries: usize,
    pub max_entries: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            pattern_bits: 5,
            min_entries: 8,
            max_entries: 128,
        }
    }
}

impl ChunkConfig {
    pub fn new(pattern_bits: u8, min_entries: usize, max_entries: usize) -> Result<Self, TreeError> {
        let cfg = ChunkConfig {
            pattern_bits,
            min_entries,
            max_entries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if !(1..=16).contains(&self.pattern_bits) {
            return Err(TreeError::InvalidInput(format!(
                "pattern_bits {} outside 1..=16",
                self.pattern_bits
            )));
        }
        if self.min_entries < 2 || self.min_entries > self.max_entries {
            // A minimum of one would let an index level never shrink.
            return Err(TreeError::InvalidInput(format!(
                "need 2 <= min_entries ({}) <= max_entries ({})",
                self.min_entries, self.max_entries
            )));
        }
        Ok(())
    }

    fn mask(&self) -> u64 {
        (1u64 << self.pattern_bits) - 1
    }
}

/// Polynomial hash of one serialized item, computed with Horner's rule.
pub fn pattern_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |h, &b| {
        let t = (h as u128 * BASE as u128 + b as u128 + 1) % MODULUS as u128;
        t as u64
    })
}

pub(crate) fn item_pattern_hash<T: LevelItem>(item: &T) -> u64 {
    let mut w = Writer::new();
    item.encode_into(&mut w);
    pattern_hash(w.as_slice())
}

/// Streaming boundary detector.
#[derive(Debug, Clone)]
pub(crate) struct Chunker {
    cfg: ChunkConfig,
    count: usize,
}

impl Chunker {
    pub fn new(cfg: ChunkConfig) -> Self {
        Chunker { cfg, count: 0 }
    }

    /// Feeds one item; returns true when a boundary follows it.
    pub fn push<T: LevelItem>(&mut self, item: &T) -> bool {
        self.count += 1;
        let boundary = self.count >= self.cfg.max_entries
            || (self.count >= self.cfg.min_entries
                && item_pattern_hash(item) & self.cfg.mask() == 0);
        if boundary {
            self.count = 0;
        }
        boundary
    }
}

/// Splits items into groups per the boundary rule. The last group may be
/// shorter than `min_entries`.
pub(crate) fn split_items<T: LevelItem>(items: Vec<T>, cfg: ChunkConfig) -> Vec<Vec<T>> {
    let mut chunker = Chunker::new(cfg);
    let mut groups = Vec::new();
    let mut cur = Vec::new();
    for item in items {
        let boundary = chunker.push(&item);
        cur.push(item);
        if boundary {
            groups.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        groups.push(cur);
    }
    groups
}

pub(crate) fn check_sorted<T: LevelItem>(items: &[T]) -> Result<(), TreeError> {
    match items.windows(2).position(|w| w[0].key() >= w[1].key()) {
        None => Ok(()),
        Some(i) => Err(TreeError::InvalidInput(format!(
            "keys not strictly increasing at position {}",
            i + 1
        ))),
    }
}

/// Splits a sorted entry list into leaf nodes.
pub fn chunk_entries(entries: &[Entry], cfg: ChunkConfig) -> Result<Vec<PosNode>, TreeError> {
    cfg.validate()?;
    check_sorted(entries)?;
    Ok(split_items(entries.to_vec(), cfg)
        .into_iter()
        .map(PosNode::Leaf)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(n: usize) -> Vec<Entry> {
        (0..n)
            .map(|i| Entry::new(format!("key{i:06}"), format!("v{}", i * 7)))
            .collect()
    }

    #[test]
    fn below_minimum_is_single_node() {
        let cfg = ChunkConfig::new(5, 4, 128).unwrap();
        let nodes = chunk_entries(&entries(3), cfg).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].len(), 3);
    }

    #[test]
    fn unsorted_or_duplicate_input_is_rejected() {
        let mut e = entries(5);
        e.swap(1, 2);
        assert!(matches!(
            chunk_entries(&e, ChunkConfig::default()),
            Err(TreeError::InvalidInput(_))
        ));
        let mut d = entries(5);
        d[3] = d[2].clone();
        assert!(chunk_entries(&d, ChunkConfig::default()).is_err());
    }

    #[test]
    fn node_sizes_respect_bounds() {
        let cfg = ChunkConfig::default();
        let nodes = chunk_entries(&entries(5000), cfg).unwrap();
        let (last, rest) = nodes.split_last().unwrap();
        assert!(rest
            .iter()
            .all(|n| n.len() >= cfg.min_entries && n.len() <= cfg.max_entries));
        assert!(last.len() <= cfg.max_entries);
        let total: usize = nodes.iter().map(PosNode::len).sum();
        assert_eq!(total, 5000);
    }

    #[test]
    fn config_bounds() {
        assert!(ChunkConfig::new(0, 8, 128).is_err());
        assert!(ChunkConfig::new(17, 8, 128).is_err());
        assert!(ChunkConfig::new(5, 9, 8).is_err());
        assert!(ChunkConfig::new(16, 8, 8).is_ok());
    }
}
