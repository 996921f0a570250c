use std::sync::Arc;

use crate::codec::{DecodeError, Reader, Writer};
use crate::hash::{Hash, HASH_LEN};

const KIND_LEAF: u8 = 0;
const KIND_INDEX: u8 = 1;

/// A key/value pair stored in a leaf. `prev_hash` names the leaf that held
/// the previous version of the key, if any.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entry {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub prev_hash: Option<Hash>,
}

impl Entry {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        Entry {
            key: key.into(),
            value: value.into(),
            prev_hash: None,
        }
    }

    pub fn with_prev(mut self, prev: Option<Hash>) -> Self {
        self.prev_hash = prev;
        self
    }
}

/// Pointer from an index node to a child: the child's first key and hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChildRef {
    pub first_key: Vec<u8>,
    pub hash: Hash,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PosNode {
    Leaf(Vec<Entry>),
    Index { level: u8, children: Vec<ChildRef> },
}

/// Items that make up one tree level: entries at the leaves, child
/// pointers above.
pub(crate) trait LevelItem: Clone {
    fn key(&self) -> &[u8];
    fn encode_into(&self, w: &mut Writer);
    fn items_of(node: &PosNode) -> Option<&[Self]>;
    fn make_node(level: u8, items: Vec<Self>) -> PosNode;
}

impl LevelItem for Entry {
    fn key(&self) -> &[u8] {
        &self.key
    }

    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.key).bytes(&self.value);
        match &self.prev_hash {
            Some(h) => w.bytes(h.as_bytes()),
            None => w.bytes(&[]),
        };
    }

    fn items_of(node: &PosNode) -> Option<&[Self]> {
        match node {
            PosNode::Leaf(e) => Some(e),
            PosNode::Index { .. } => None,
        }
    }

    fn make_node(_level: u8, items: Vec<Self>) -> PosNode {
        PosNode::Leaf(items)
    }
}

impl LevelItem for ChildRef {
    fn key(&self) -> &[u8] {
        &self.first_key
    }

    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.first_key).bytes(self.hash.as_bytes());
    }

    fn items_of(node: &PosNode) -> Option<&[Self]> {
        match node {
            PosNode::Index { children, .. } => Some(children),
            PosNode::Leaf(_) => None,
        }
    }

    fn make_node(level: u8, items: Vec<Self>) -> PosNode {
        PosNode::Index {
            level,
            children: items,
        }
    }
}

impl PosNode {
    pub fn level(&self) -> u8 {
        match self {
            PosNode::Leaf(_) => 0,
            PosNode::Index { level, .. } => *level,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, PosNode::Leaf(_))
    }

    pub fn len(&self) -> usize {
        match self {
            PosNode::Leaf(e) => e.len(),
            PosNode::Index { children, .. } => children.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_key(&self) -> Option<&[u8]> {
        match self {
            PosNode::Leaf(e) => e.first().map(|e| e.key.as_slice()),
            PosNode::Index { children, .. } => children.first().map(|c| c.first_key.as_slice()),
        }
    }

    pub fn last_key(&self) -> Option<&[u8]> {
        match self {
            PosNode::Leaf(e) => e.last().map(|e| e.key.as_slice()),
            PosNode::Index { children, .. } => children.last().map(|c| c.first_key.as_slice()),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        Entry::items_of(self).unwrap_or(&[])
    }

    pub fn children(&self) -> &[ChildRef] {
        ChildRef::items_of(self).unwrap_or(&[])
    }

    /// Canonical serialization: level byte, kind byte, 4-byte item count,
    /// then length-prefixed fields for every item.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(64 + self.len() * 48);
        match self {
            PosNode::Leaf(entries) => {
                w.u8(0).u8(KIND_LEAF).u32(entries.len() as u32);
                for e in entries {
                    e.encode_into(&mut w);
                }
            }
            PosNode::Index { level, children } => {
                w.u8(*level).u8(KIND_INDEX).u32(children.len() as u32);
                for c in children {
                    c.encode_into(&mut w);
                }
            }
        }
        w.into_bytes()
    }

    pub fn hash(&self) -> Hash {
        node_hash(self)
    }

    /// Strict decode: rejects unsorted keys, malformed hashes, empty nodes
    /// and trailing bytes, so that `decode(b).encode() == b` whenever it
    /// succeeds.
    pub fn decode(bytes: &[u8]) -> Result<PosNode, DecodeError> {
        let mut r = Reader::new(bytes);
        let node = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(node)
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<PosNode, DecodeError> {
        let level = r.u8()?;
        let kind = r.u8()?;
        let n = r.count(12)?;
        if n == 0 {
            return Err(DecodeError::Invalid("empty node"));
        }
        let node = match kind {
            KIND_LEAF => {
                if level != 0 {
                    return Err(DecodeError::Invalid("leaf with non-zero level"));
                }
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let key = r.vec()?;
                    let value = r.vec()?;
                    let prev = r.bytes()?;
                    let prev_hash = match prev.len() {
                        0 => None,
                        HASH_LEN => Some(Hash(prev.try_into().expect("length checked"))),
                        _ => return Err(DecodeError::Invalid("prev_hash length")),
                    };
                    entries.push(Entry {
                        key,
                        value,
                        prev_hash,
                    });
                }
                PosNode::Leaf(entries)
            }
            KIND_INDEX => {
                if level == 0 {
                    return Err(DecodeError::Invalid("index node at level 0"));
                }
                let mut children = Vec::with_capacity(n);
                for _ in 0..n {
                    let first_key = r.vec()?;
                    let h = r.bytes()?;
                    let hash: [u8; HASH_LEN] = h
                        .try_into()
                        .map_err(|_| DecodeError::Invalid("child hash length"))?;
                    children.push(ChildRef {
                        first_key,
                        hash: Hash(hash),
                    });
                }
                PosNode::Index { level, children }
            }
            tag => return Err(DecodeError::BadTag { what: "node kind", tag }),
        };
        if !keys_strictly_increasing(&node) {
            return Err(DecodeError::Invalid("keys not strictly increasing"));
        }
        Ok(node)
    }
}

fn keys_strictly_increasing(node: &PosNode) -> bool {
    match node {
        PosNode::Leaf(e) => e.windows(2).all(|w| w[0].key < w[1].key),
        PosNode::Index { children, .. } => children.windows(2).all(|w| w[0].first_key < w[1].first_key),
    }
}

/// BLAKE2b-256 over the canonical serialization.
pub fn node_hash(node: &PosNode) -> Hash {
    Hash::of(&node.encode())
}

/// Index of the child responsible for `key`: the last child whose first key
/// is `<= key`, or the first child when `key` precedes all of them.
pub fn route(children: &[ChildRef], key: &[u8]) -> usize {
    children
        .partition_point(|c| c.first_key.as_slice() <= key)
        .saturating_sub(1)
}

pub type NodeRef = Arc<PosNode>;
