use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::types::{AppendOnlyProof, CurrentValueProof, InclusionProof, ProofBundle};
use super::ProofError;
use crate::hash::Hash;
use crate::ledger::{block_key, DataBlock, Ledger, LedgerDigest};
use crate::postree::{PosNode, TreeRoot};

/// Appends nodes not seen before, keeping first-use order.
#[derive(Default)]
struct NodeSet {
    seen: HashSet<Hash>,
    nodes: Vec<PosNode>,
}

impl NodeSet {
    fn extend(&mut self, path: &[Arc<PosNode>]) {
        for n in path {
            if self.seen.insert(n.hash()) {
                self.nodes.push((**n).clone());
            }
        }
    }
}

fn block_tree(ledger: &Ledger, digest: &LedgerDigest) -> Result<TreeRoot, ProofError> {
    if !ledger.is_known_digest(digest) {
        return Err(ProofError::UnknownDigest(*digest));
    }
    Ok(ledger.block_tree_at(digest.block_no).expect("known digest"))
}

fn state_of(block: &DataBlock) -> TreeRoot {
    TreeRoot {
        root_hash: block.state_root,
        entry_count: block.state_keys,
    }
}

fn lower_paths(ledger: &Ledger, block: &DataBlock, keys: &[Vec<u8>], into: &mut NodeSet) -> Result<(), ProofError> {
    let state = state_of(block);
    for k in keys {
        let found = ledger.state_tree().lookup(&state, k)?;
        if found.entry.is_none() {
            return Err(ProofError::KeyNotFound {
                block_no: block.block_no,
                key: k.clone(),
            });
        }
        into.extend(&found.path);
    }
    Ok(())
}

/// Proves the state of `keys` after `block_no`, against `digest`.
pub fn prove_inclusion(
    ledger: &Ledger,
    digest: &LedgerDigest,
    block_no: u64,
    keys: &[Vec<u8>],
) -> Result<InclusionProof, ProofError> {
    let upper_root = block_tree(ledger, digest)?;
    if block_no == 0 || block_no > digest.block_no {
        return Err(ProofError::OutOfRange {
            block_no,
            head: digest.block_no,
        });
    }
    let (block, path) = ledger.get_block_in(&upper_root, block_no)?;
    let mut lower = NodeSet::default();
    lower_paths(ledger, &block, keys, &mut lower)?;
    Ok(InclusionProof {
        block_no,
        upper: path.iter().map(|n| (**n).clone()).collect(),
        block,
        lower: lower.nodes,
    })
}

/// Proves that `keys` hold their latest values as of `digest`.
pub fn prove_current(ledger: &Ledger, digest: &LedgerDigest, keys: &[Vec<u8>]) -> Result<CurrentValueProof, ProofError> {
    if digest.block_no == 0 {
        return Err(ProofError::OutOfRange { block_no: 0, head: 0 });
    }
    prove_inclusion(ledger, digest, digest.block_no, keys).map(CurrentValueProof)
}

/// Proves that `old`'s history is a prefix of `new`'s.
pub fn prove_append(ledger: &Ledger, old: &LedgerDigest, new: &LedgerDigest) -> Result<AppendOnlyProof, ProofError> {
    if !ledger.is_known_digest(old) {
        return Err(ProofError::UnknownDigest(*old));
    }
    let upper_root = block_tree(ledger, new)?;
    if old.block_no > new.block_no {
        return Err(ProofError::OutOfRange {
            block_no: old.block_no,
            head: new.block_no,
        });
    }
    let mut nodes = NodeSet::default();
    if old != new {
        if old.block_no > 0 {
            let left = ledger.block_tree().lookup(&upper_root, &block_key(old.block_no))?;
            nodes.extend(&left.path);
        }
        let right = ledger.block_tree().lookup(&upper_root, &block_key(new.block_no))?;
        nodes.extend(&right.path);
    }
    Ok(AppendOnlyProof {
        old: *old,
        new: *new,
        nodes: nodes.nodes,
    })
}

/// One bundle for keys spread over several blocks. Nodes shared between
/// blocks (most of the block tree, unchanged state subtrees) appear once.
pub fn prove_bundle(
    ledger: &Ledger,
    digest: &LedgerDigest,
    items: &[(u64, Vec<u8>)],
) -> Result<ProofBundle, ProofError> {
    let upper_root = block_tree(ledger, digest)?;
    let mut by_block: BTreeMap<u64, Vec<Vec<u8>>> = BTreeMap::new();
    for (b, k) in items {
        if *b == 0 || *b > digest.block_no {
            return Err(ProofError::OutOfRange {
                block_no: *b,
                head: digest.block_no,
            });
        }
        by_block.entry(*b).or_default().push(k.clone());
    }
    let mut upper = NodeSet::default();
    let mut lower = NodeSet::default();
    let mut blocks = Vec::new();
    for (b, mut keys) in by_block {
        keys.sort();
        keys.dedup();
        let (block, path) = ledger.get_block_in(&upper_root, b)?;
        upper.extend(&path);
        lower_paths(ledger, &block, &keys, &mut lower)?;
        blocks.push(block);
    }
    Ok(ProofBundle {
        at_block: digest.block_no,
        upper: upper.nodes,
        blocks,
        lower: lower.nodes,
    })
}
