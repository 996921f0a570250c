use crate::codec::{DecodeError, Reader, Writer};
use crate::ledger::{DataBlock, LedgerDigest};
use crate::postree::PosNode;

pub(crate) const KIND_INCLUSION: u8 = 1;
pub(crate) const KIND_CURRENT: u8 = 2;
pub(crate) const KIND_APPEND: u8 = 3;
pub(crate) const KIND_BUNDLE: u8 = 4;

pub(crate) const ROLE_UPPER: u8 = 0;
pub(crate) const ROLE_LOWER: u8 = 1;
pub(crate) const ROLE_BLOCK: u8 = 2;

/// Evidence that keys held given values in the state after `block_no`.
/// Nodes are deduplicated: keys sharing a path share its nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionProof {
    pub block_no: u64,
    /// Block-tree nodes from the root to the leaf holding `block_no`.
    pub upper: Vec<PosNode>,
    pub block: DataBlock,
    /// State-tree nodes on the root-to-leaf paths of the proven keys.
    pub lower: Vec<PosNode>,
}

/// An inclusion proof against the digest's own, latest block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurrentValueProof(pub InclusionProof);

/// Evidence that the history behind `old` is a prefix of the one behind
/// `new`: the new block tree's path to `old.block_no` and its rightmost
/// path. The old root is rebuilt by cutting the first path at
/// `old.block_no`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendOnlyProof {
    pub old: LedgerDigest,
    pub new: LedgerDigest,
    pub nodes: Vec<PosNode>,
}

/// Inclusion evidence for many (block, key) pairs against one digest,
/// sharing every node that the individual proofs would repeat.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProofBundle {
    pub at_block: u64,
    pub upper: Vec<PosNode>,
    pub blocks: Vec<DataBlock>,
    pub lower: Vec<PosNode>,
}

/// One fact a bundle is checked against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Claim {
    pub block_no: u64,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

fn put_nodes(w: &mut Writer, groups: &[(u8, &[PosNode])], blocks: &[DataBlock]) {
    let n: usize = groups.iter().map(|(_, g)| g.len()).sum::<usize>() + blocks.len();
    w.count(n);
    for (role, nodes) in groups {
        for node in *nodes {
            w.u8(*role).bytes(&node.encode());
        }
    }
    for b in blocks {
        w.u8(ROLE_BLOCK).bytes(&b.encode());
    }
}

struct Tagged {
    upper: Vec<PosNode>,
    lower: Vec<PosNode>,
    blocks: Vec<DataBlock>,
}

fn get_nodes(r: &mut Reader<'_>) -> Result<Tagged, DecodeError> {
    let n = r.count(5)?;
    let mut t = Tagged {
        upper: Vec::new(),
        lower: Vec::new(),
        blocks: Vec::new(),
    };
    for _ in 0..n {
        let role = r.u8()?;
        let bytes = r.bytes()?;
        match role {
            ROLE_UPPER => t.upper.push(PosNode::decode(bytes)?),
            ROLE_LOWER => t.lower.push(PosNode::decode(bytes)?),
            ROLE_BLOCK => t.blocks.push(DataBlock::decode(bytes)?),
            tag => return Err(DecodeError::BadTag { what: "proof node role", tag }),
        }
    }
    Ok(t)
}

fn expect_kind(r: &mut Reader<'_>, kind: u8) -> Result<(), DecodeError> {
    match r.u8()? {
        k if k == kind => Ok(()),
        tag => Err(DecodeError::BadTag { what: "proof kind", tag }),
    }
}

impl InclusionProof {
    fn encode_kind(&self, kind: u8) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(kind).u64(self.block_no);
        put_nodes(
            &mut w,
            &[(ROLE_UPPER, &self.upper), (ROLE_LOWER, &self.lower)],
            std::slice::from_ref(&self.block),
        );
        w.into_bytes()
    }

    fn decode_kind(bytes: &[u8], kind: u8) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        expect_kind(&mut r, kind)?;
        let block_no = r.u64()?;
        let mut t = get_nodes(&mut r)?;
        r.finish()?;
        if t.blocks.len() != 1 {
            return Err(DecodeError::Invalid("inclusion proof needs exactly one block"));
        }
        Ok(InclusionProof {
            block_no,
            upper: t.upper,
            block: t.blocks.pop().unwrap(),
            lower: t.lower,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_kind(KIND_INCLUSION)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::decode_kind(bytes, KIND_INCLUSION)
    }

    /// Tree nodes in the proof, block-tree and state-tree together. The
    /// data block is not counted.
    pub fn node_count(&self) -> usize {
        self.upper.len() + self.lower.len()
    }

    /// Value the proof shows for `key`, without verifying anything.
    pub fn value_of(&self, key: &[u8]) -> Option<&[u8]> {
        self.lower
            .iter()
            .filter(|n| n.is_leaf())
            .flat_map(|n| n.entries())
            .find(|e| e.key == key)
            .map(|e| e.value.as_slice())
    }
}

impl CurrentValueProof {
    pub fn encode(&self) -> Vec<u8> {
        self.0.encode_kind(KIND_CURRENT)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        InclusionProof::decode_kind(bytes, KIND_CURRENT).map(CurrentValueProof)
    }
}

impl AppendOnlyProof {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(KIND_APPEND);
        self.old.encode_into(&mut w);
        self.new.encode_into(&mut w);
        put_nodes(&mut w, &[(ROLE_UPPER, &self.nodes)], &[]);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        expect_kind(&mut r, KIND_APPEND)?;
        let old = LedgerDigest::decode_from(&mut r)?;
        let new = LedgerDigest::decode_from(&mut r)?;
        let t = get_nodes(&mut r)?;
        r.finish()?;
        if !t.lower.is_empty() || !t.blocks.is_empty() {
            return Err(DecodeError::Invalid("append-only proof holds only block-tree nodes"));
        }
        Ok(AppendOnlyProof {
            old,
            new,
            nodes: t.upper,
        })
    }
}

impl ProofBundle {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(KIND_BUNDLE).u64(self.at_block);
        put_nodes(&mut w, &[(ROLE_UPPER, &self.upper), (ROLE_LOWER, &self.lower)], &self.blocks);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        expect_kind(&mut r, KIND_BUNDLE)?;
        let at_block = r.u64()?;
        let t = get_nodes(&mut r)?;
        r.finish()?;
        Ok(ProofBundle {
            at_block,
            upper: t.upper,
            blocks: t.blocks,
            lower: t.lower,
        })
    }

    /// Tree nodes in the bundle; data blocks are not counted.
    pub fn node_count(&self) -> usize {
        self.upper.len() + self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0 && self.blocks.is_empty()
    }
}
