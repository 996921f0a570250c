//! Proof checking. Verifiers trust only the digest they are handed; every
//! supplied node must be reachable by hash from it and must be used.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::types::{AppendOnlyProof, Claim, CurrentValueProof, InclusionProof, ProofBundle};
use crate::hash::Hash;
use crate::ledger::{block_key, DataBlock, LedgerDigest};
use crate::postree::{route, ChildRef, Entry, PosNode};

/// Why a proof was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("proof rejected: {0}")]
pub struct Rejection(pub String);

fn reject<T>(msg: impl Into<String>) -> Result<T, Rejection> {
    Err(Rejection(msg.into()))
}

struct Table<'a> {
    nodes: HashMap<Hash, &'a PosNode>,
    used: HashSet<Hash>,
}

impl<'a> Table<'a> {
    fn new(nodes: &'a [PosNode]) -> Result<Self, Rejection> {
        let mut map = HashMap::with_capacity(nodes.len());
        for n in nodes {
            if map.insert(n.hash(), n).is_some() {
                return reject("duplicate node");
            }
        }
        Ok(Table {
            nodes: map,
            used: HashSet::new(),
        })
    }

    fn node(&mut self, h: &Hash) -> Result<&'a PosNode, Rejection> {
        let n = *self
            .nodes
            .get(h)
            .ok_or_else(|| Rejection(format!("node {h} missing")))?;
        self.used.insert(*h);
        Ok(n)
    }

    /// Follows `key` from `root` down to a leaf. Returns the path (root
    /// first) and, per index node, the child taken.
    fn walk(&mut self, root: &Hash, key: &[u8]) -> Result<(Vec<&'a PosNode>, Vec<usize>), Rejection> {
        let mut node = self.node(root)?;
        let mut path = vec![node];
        let mut taken = Vec::new();
        while let PosNode::Index { level, children } = node {
            let idx = route(children, key);
            let child = self.node(&children[idx].hash)?;
            if child.level() + 1 != *level {
                return reject("level mismatch");
            }
            if child.first_key() != Some(children[idx].first_key.as_slice()) {
                return reject("child first key mismatch");
            }
            taken.push(idx);
            path.push(child);
            node = child;
        }
        Ok((path, taken))
    }

    fn rightmost(&mut self, root: &Hash) -> Result<Vec<&'a PosNode>, Rejection> {
        let mut node = self.node(root)?;
        let mut path = vec![node];
        while let PosNode::Index { level, children } = node {
            let last = children.last().expect("decoded nodes are non-empty");
            let child = self.node(&last.hash)?;
            if child.level() + 1 != *level {
                return reject("level mismatch");
            }
            path.push(child);
            node = child;
        }
        Ok(path)
    }

    fn all_used(&self) -> Result<(), Rejection> {
        if self.used.len() != self.nodes.len() {
            return reject(format!("{} unused nodes", self.nodes.len() - self.used.len()));
        }
        Ok(())
    }
}

fn leaf_entry<'a>(leaf: &'a PosNode, key: &[u8]) -> Option<&'a Entry> {
    leaf.entries().iter().find(|e| e.key == key)
}

fn block_hash_in(leaf: &PosNode, block_no: u64) -> Result<Hash, Rejection> {
    let e = leaf_entry(leaf, &block_key(block_no))
        .ok_or_else(|| Rejection(format!("block {block_no} not in block tree")))?;
    match <[u8; 32]>::try_from(e.value.as_slice()) {
        Ok(h) => Ok(Hash(h)),
        Err(_) => reject("block-tree value is not a hash"),
    }
}

fn check_inclusion(
    p: &InclusionProof,
    digest: &LedgerDigest,
    expected: &[(Vec<u8>, Vec<u8>)],
    current: bool,
) -> Result<(), Rejection> {
    if p.block_no == 0 || p.block_no > digest.block_no {
        return reject(format!("block {} outside 1..={}", p.block_no, digest.block_no));
    }
    if current && p.block_no != digest.block_no {
        return reject(format!(
            "current-value proof at block {} but digest is at {}",
            p.block_no, digest.block_no
        ));
    }
    let mut upper = Table::new(&p.upper)?;
    let (path, taken) = upper.walk(&digest.digest, &block_key(p.block_no))?;
    if current {
        let rightmost = path
            .iter()
            .zip(&taken)
            .all(|(n, &i)| i + 1 == n.children().len());
        let leaf = path.last().unwrap();
        if !rightmost || leaf.last_key() != Some(&block_key(p.block_no)[..]) {
            return reject("block is not the latest in the digest");
        }
    }
    let bh = block_hash_in(path.last().unwrap(), p.block_no)?;
    if p.block.hash() != bh || p.block.block_no != p.block_no {
        return reject("data block does not match block tree");
    }
    upper.all_used()?;

    let mut lower = Table::new(&p.lower)?;
    for (k, v) in expected {
        if p.block.state_keys == 0 {
            return reject("empty state");
        }
        let (path, _) = lower.walk(&p.block.state_root, k)?;
        match leaf_entry(path.last().unwrap(), k) {
            Some(e) if &e.value == v => {}
            Some(_) => return reject(format!("wrong value for key {}", String::from_utf8_lossy(k))),
            None => return reject(format!("key {} absent", String::from_utf8_lossy(k))),
        }
    }
    lower.all_used()
}

/// Checks that each expected pair is in the state after `proof.block_no`
/// under `digest`.
pub fn check_inclusion_proof(
    proof: &InclusionProof,
    digest: &LedgerDigest,
    expected: &[(Vec<u8>, Vec<u8>)],
) -> Result<(), Rejection> {
    check_inclusion(proof, digest, expected, false)
}

pub fn verify_inclusion(proof: &InclusionProof, digest: &LedgerDigest, expected: &[(Vec<u8>, Vec<u8>)]) -> bool {
    check_inclusion_proof(proof, digest, expected).is_ok()
}

/// As inclusion, but the block must be the digest's latest block.
pub fn check_current_proof(
    proof: &CurrentValueProof,
    digest: &LedgerDigest,
    expected: &[(Vec<u8>, Vec<u8>)],
) -> Result<(), Rejection> {
    check_inclusion(&proof.0, digest, expected, true)
}

pub fn verify_current(proof: &CurrentValueProof, digest: &LedgerDigest, expected: &[(Vec<u8>, Vec<u8>)]) -> bool {
    check_current_proof(proof, digest, expected).is_ok()
}

pub fn check_bundle(bundle: &ProofBundle, digest: &LedgerDigest, claims: &[Claim]) -> Result<(), Rejection> {
    if bundle.at_block != digest.block_no {
        return reject(format!(
            "bundle made for block {}, digest at {}",
            bundle.at_block, digest.block_no
        ));
    }
    let mut blocks: HashMap<Hash, &DataBlock> = HashMap::new();
    for b in &bundle.blocks {
        if blocks.insert(b.hash(), b).is_some() {
            return reject("duplicate block");
        }
    }
    let mut used_blocks = HashSet::new();
    let mut upper = Table::new(&bundle.upper)?;
    let mut lower = Table::new(&bundle.lower)?;
    for c in claims {
        if c.block_no == 0 || c.block_no > digest.block_no {
            return reject(format!("claim at block {} outside 1..={}", c.block_no, digest.block_no));
        }
        let (path, _) = upper.walk(&digest.digest, &block_key(c.block_no))?;
        let bh = block_hash_in(path.last().unwrap(), c.block_no)?;
        let block = blocks
            .get(&bh)
            .ok_or_else(|| Rejection(format!("block {} missing", c.block_no)))?;
        if block.block_no != c.block_no {
            return reject("block number mismatch");
        }
        used_blocks.insert(bh);
        let (path, _) = lower.walk(&block.state_root, &c.key)?;
        match leaf_entry(path.last().unwrap(), &c.key) {
            Some(e) if e.value == c.value => {}
            _ => {
                return reject(format!(
                    "claim for key {} at block {} not proven",
                    String::from_utf8_lossy(&c.key),
                    c.block_no
                ))
            }
        }
    }
    if used_blocks.len() != blocks.len() {
        return reject("unused block");
    }
    upper.all_used()?;
    lower.all_used()
}

pub fn verify_bundle(bundle: &ProofBundle, digest: &LedgerDigest, claims: &[Claim]) -> bool {
    check_bundle(bundle, digest, claims).is_ok()
}

/// Checks that `old`'s history is a prefix of `new`'s.
pub fn check_append(proof: &AppendOnlyProof, old: &LedgerDigest, new: &LedgerDigest) -> Result<(), Rejection> {
    if proof.old != *old || proof.new != *new {
        return reject("proof is for different digests");
    }
    if old == new {
        if !proof.nodes.is_empty() {
            return reject("identity proof must be empty");
        }
        return Ok(());
    }
    if old.block_no >= new.block_no {
        return reject(format!(
            "block {} does not precede block {}",
            old.block_no, new.block_no
        ));
    }
    let mut t = Table::new(&proof.nodes)?;

    // The new tree must end at new.block_no.
    let right = t.rightmost(&new.digest)?;
    if right.last().unwrap().last_key() != Some(&block_key(new.block_no)[..]) {
        return reject("new digest does not end at its block number");
    }

    if old.block_no == 0 {
        if old.digest != Hash::empty() {
            return reject("block 0 must carry the empty digest");
        }
        return t.all_used();
    }

    // Cut the path to old.block_no at that block, bottom-up, and stop at
    // the first level whose cut node starts at block 1: that is the old
    // tree's root.
    let old_key = block_key(old.block_no);
    let first_key = block_key(1);
    let (path, taken) = t.walk(&new.digest, &old_key)?;
    let leaf = path.last().unwrap();
    let cut = match leaf.entries().iter().position(|e| e.key == old_key) {
        Some(i) => i,
        None => return reject(format!("block {} not in new tree", old.block_no)),
    };
    let mut cut_node = PosNode::Leaf(leaf.entries()[..=cut].to_vec());
    let mut old_root = None;
    let mut level = path.len() - 1;
    loop {
        if cut_node.first_key() == Some(&first_key[..]) {
            old_root = Some(cut_node.hash());
            break;
        }
        if level == 0 {
            break;
        }
        level -= 1;
        let parent = path[level];
        let idx = taken[level];
        let mut kids: Vec<ChildRef> = parent.children()[..=idx].to_vec();
        kids.last_mut().unwrap().hash = cut_node.hash();
        cut_node = PosNode::Index {
            level: parent.level(),
            children: kids,
        };
    }
    match old_root {
        Some(h) if h == old.digest => t.all_used(),
        Some(_) => reject("old digest is not a prefix of the new history"),
        None => reject("no level of the new tree reduces to the old root"),
    }
}

pub fn verify_append(proof: &AppendOnlyProof, old: &LedgerDigest, new: &LedgerDigest) -> bool {
    check_append(proof, old, new).is_ok()
}
