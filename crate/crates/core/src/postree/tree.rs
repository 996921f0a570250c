use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::chunk::{check_sorted, split_items, ChunkConfig, Chunker};
use super::node::{route, ChildRef, Entry, LevelItem, PosNode};
use super::store::NodeStore;
use super::TreeError;
use crate::hash::Hash;

/// Handle on one version of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeRoot {
    pub root_hash: Hash,
    pub entry_count: u64,
}

impl TreeRoot {
    pub fn empty() -> TreeRoot {
        TreeRoot {
            root_hash: Hash::empty(),
            entry_count: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count == 0
    }
}

/// Result of a point lookup. `path` runs from the root to the leaf that
/// holds, or would hold, the key.
#[derive(Debug, Clone)]
pub struct Lookup {
    pub entry: Option<Entry>,
    pub path: Vec<Arc<PosNode>>,
}

#[derive(Debug, Clone)]
enum Mutation<T> {
    Upsert(T),
    Delete(Vec<u8>),
}

impl<T: LevelItem> Mutation<T> {
    fn key(&self) -> &[u8] {
        match self {
            Mutation::Upsert(t) => t.key(),
            Mutation::Delete(k) => k,
        }
    }
}

/// A POS-tree over a shared node store.
#[derive(Clone)]
pub struct PosTree {
    store: Arc<dyn NodeStore>,
    cfg: ChunkConfig,
}

impl PosTree {
    pub fn new(store: Arc<dyn NodeStore>, cfg: ChunkConfig) -> Self {
        PosTree { store, cfg }
    }

    pub fn store(&self) -> &Arc<dyn NodeStore> {
        &self.store
    }

    pub fn config(&self) -> ChunkConfig {
        self.cfg
    }

    pub fn load(&self, hash: &Hash) -> Result<Arc<PosNode>, TreeError> {
        self.store
            .get_node(hash)?
            .ok_or(TreeError::CorruptTree(*hash))
    }

    fn load_root(&self, root: &TreeRoot) -> Result<Arc<PosNode>, TreeError> {
        self.store
            .get_node(&root.root_hash)?
            .ok_or(TreeError::NotFound(root.root_hash))
    }

    fn load_child(&self, parent: &PosNode, idx: usize) -> Result<Arc<PosNode>, TreeError> {
        let h = parent.children()[idx].hash;
        let child = self.load(&h)?;
        if child.level() + 1 != parent.level() {
            return Err(TreeError::CorruptTree(h));
        }
        Ok(child)
    }

    fn write(&self, node: PosNode) -> Result<ChildRef, TreeError> {
        let first_key = node
            .first_key()
            .expect("nodes are never empty")
            .to_vec();
        let hash = self.store.put_node(node)?;
        Ok(ChildRef { first_key, hash })
    }

    /// Builds a tree from a sorted, duplicate-free entry list.
    pub fn build(&self, entries: &[Entry]) -> Result<TreeRoot, TreeError> {
        self.cfg.validate()?;
        check_sorted(entries)?;
        if entries.is_empty() {
            return Ok(TreeRoot::empty());
        }
        let mut refs = Vec::new();
        for group in split_items(entries.to_vec(), self.cfg) {
            refs.push(self.write(PosNode::Leaf(group))?);
        }
        Ok(TreeRoot {
            root_hash: self.build_upward(refs, 0)?,
            entry_count: entries.len() as u64,
        })
    }

    /// Stacks index levels on top of the nodes of `level` until one node
    /// remains; returns its hash.
    fn build_upward(&self, mut refs: Vec<ChildRef>, mut level: u8) -> Result<Hash, TreeError> {
        while refs.len() > 1 {
            level += 1;
            let mut next = Vec::new();
            for group in split_items(refs, self.cfg) {
                next.push(self.write(ChildRef::make_node(level, group))?);
            }
            refs = next;
        }
        Ok(refs[0].hash)
    }

    /// Applies sorted upserts with copy-on-write. Only nodes whose content
    /// changes are rewritten; the result is identical to rebuilding from the
    /// merged entry set. Callers set `prev_hash` on each entry.
    pub fn update(&self, root: &TreeRoot, updates: &[Entry]) -> Result<TreeRoot, TreeError> {
        check_sorted(updates)?;
        if root.is_empty() {
            return self.build(updates);
        }
        let root_node = self.load_root(root)?;
        if updates.is_empty() {
            return Ok(*root);
        }
        let root_level = root_node.level();
        let mut inserted = 0u64;

        let muts: Vec<Mutation<Entry>> = updates.iter().cloned().map(Mutation::Upsert).collect();
        let mut step = self.apply_level(&root.root_hash, root_level, 0, &muts, &mut inserted)?;
        for level in 1..=root_level {
            let parent_muts = match step {
                LevelOutcome::Parent(m) => m,
                LevelOutcome::Top(_) => unreachable!("top reached below root level"),
            };
            let mut ignored = 0;
            step = self.apply_level(&root.root_hash, root_level, level, &parent_muts, &mut ignored)?;
        }
        let top = match step {
            LevelOutcome::Top(refs) => refs,
            LevelOutcome::Parent(_) => unreachable!("root level always yields top"),
        };

        let entry_count = root.entry_count + inserted;
        let root_hash = match top.len() {
            0 => return Ok(TreeRoot::empty()),
            1 => self.collapse(top[0].hash)?,
            _ => self.build_upward(top, root_level)?,
        };
        Ok(TreeRoot {
            root_hash,
            entry_count,
        })
    }

    /// An index node with a single child is never a root.
    fn collapse(&self, mut hash: Hash) -> Result<Hash, TreeError> {
        loop {
            let node = self.load(&hash)?;
            match &*node {
                PosNode::Index { children, .. } if children.len() == 1 => hash = children[0].hash,
                _ => return Ok(hash),
            }
        }
    }

    fn apply_level<T: LevelItem>(
        &self,
        root_hash: &Hash,
        root_level: u8,
        level: u8,
        muts: &[Mutation<T>],
        inserted: &mut u64,
    ) -> Result<LevelOutcome, TreeError> {
        let mut parent: BTreeMap<Vec<u8>, Mutation<ChildRef>> = BTreeMap::new();
        let mut top = Vec::new();
        let mut mi = 0;

        while mi < muts.len() {
            // Each region starts on an existing node boundary, so chunking
            // restarts from an empty node there. It ends as soon as a new
            // boundary coincides with an old one.
            let mut cursor = LevelCursor::seek(self, root_hash, level, muts[mi].key())?;
            let mut chunker = Chunker::new(self.cfg);
            let mut pending: Vec<T> = Vec::new();
            let mut removed = Vec::new();
            let mut created = Vec::new();

            loop {
                let node = cursor.current.clone();
                let items = T::items_of(&node).ok_or(TreeError::CorruptTree(*root_hash))?;
                removed.push(node.first_key().expect("nodes are never empty").to_vec());
                let next_first = cursor.peek_next_first_key().map(<[u8]>::to_vec);
                let end = match &next_first {
                    Some(nf) => mi + muts[mi..].partition_point(|m| m.key() < nf.as_slice()),
                    None => muts.len(),
                };
                for item in merge(items, &muts[mi..end], inserted) {
                    let boundary = chunker.push(&item);
                    pending.push(item);
                    if boundary {
                        created.push(self.write(T::make_node(level, std::mem::take(&mut pending)))?);
                    }
                }
                mi = end;
                if next_first.is_none() {
                    if !pending.is_empty() {
                        created.push(self.write(T::make_node(level, std::mem::take(&mut pending)))?);
                    }
                    break;
                }
                if pending.is_empty() {
                    break;
                }
                cursor.advance()?;
            }

            if level == root_level {
                top = created;
            } else {
                for k in removed {
                    parent.insert(k.clone(), Mutation::Delete(k));
                }
                for r in created {
                    parent.insert(r.first_key.clone(), Mutation::Upsert(r));
                }
            }
        }

        if level == root_level {
            Ok(LevelOutcome::Top(top))
        } else {
            Ok(LevelOutcome::Parent(parent.into_values().collect()))
        }
    }

    pub fn lookup(&self, root: &TreeRoot, key: &[u8]) -> Result<Lookup, TreeError> {
        if root.is_empty() {
            return Ok(Lookup {
                entry: None,
                path: Vec::new(),
            });
        }
        let mut node = self.load_root(root)?;
        let mut path = vec![node.clone()];
        while !node.is_leaf() {
            let idx = route(node.children(), key);
            node = self.load_child(&node, idx)?;
            path.push(node.clone());
        }
        let entry = node
            .entries()
            .binary_search_by(|e| e.key.as_slice().cmp(key))
            .ok()
            .map(|i| node.entries()[i].clone());
        Ok(Lookup { entry, path })
    }

    pub fn get(&self, root: &TreeRoot, key: &[u8]) -> Result<Option<Entry>, TreeError> {
        Ok(self.lookup(root, key)?.entry)
    }

    /// Number of node levels; 0 for the empty tree.
    pub fn height(&self, root: &TreeRoot) -> Result<usize, TreeError> {
        if root.is_empty() {
            return Ok(0);
        }
        Ok(self.load_root(root)?.level() as usize + 1)
    }

    /// Greatest entry, found along the rightmost path.
    pub fn last_entry(&self, root: &TreeRoot) -> Result<Option<Entry>, TreeError> {
        if root.is_empty() {
            return Ok(None);
        }
        let mut node = self.load_root(root)?;
        while !node.is_leaf() {
            let last = node.children().len() - 1;
            node = self.load_child(&node, last)?;
        }
        Ok(node.entries().last().cloned())
    }

    /// All entries in key order. Linear in tree size.
    pub fn entries(&self, root: &TreeRoot) -> Result<Vec<Entry>, TreeError> {
        let mut out = Vec::with_capacity(root.entry_count as usize);
        if root.is_empty() {
            return Ok(out);
        }
        let mut stack = vec![self.load_root(root)?];
        while let Some(node) = stack.pop() {
            match &*node {
                PosNode::Leaf(e) => out.extend(e.iter().cloned()),
                PosNode::Index { .. } => {
                    for i in (0..node.children().len()).rev() {
                        stack.push(self.load_child(&node, i)?);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Hashes of every node reachable from `root`.
    pub fn node_hashes(&self, root: &TreeRoot) -> Result<Vec<Hash>, TreeError> {
        let mut out = Vec::new();
        if root.is_empty() {
            return Ok(out);
        }
        let mut stack = vec![root.root_hash];
        while let Some(h) = stack.pop() {
            let node = self.load(&h)?;
            out.push(h);
            stack.extend(node.children().iter().map(|c| c.hash));
        }
        Ok(out)
    }
}

enum LevelOutcome {
    Parent(Vec<Mutation<ChildRef>>),
    Top(Vec<ChildRef>),
}

fn merge<T: LevelItem>(items: &[T], muts: &[Mutation<T>], inserted: &mut u64) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len() + muts.len());
    let (mut i, mut j) = (0, 0);
    while i < items.len() || j < muts.len() {
        let ord = match (items.get(i), muts.get(j)) {
            (Some(a), Some(m)) => a.key().cmp(m.key()),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, _) => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                out.push(items[i].clone());
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                if let Mutation::Upsert(t) = &muts[j] {
                    out.push(t.clone());
                    *inserted += 1;
                }
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                if let Mutation::Upsert(t) = &muts[j] {
                    out.push(t.clone());
                }
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Walks the nodes of one level in key order.
struct LevelCursor<'a> {
    tree: &'a PosTree,
    level: u8,
    stack: Vec<(Arc<PosNode>, usize)>,
    current: Arc<PosNode>,
}

impl<'a> LevelCursor<'a> {
    fn seek(tree: &'a PosTree, root: &Hash, level: u8, key: &[u8]) -> Result<Self, TreeError> {
        let mut node = tree.load(root)?;
        let mut stack = Vec::new();
        while node.level() > level {
            let idx = route(node.children(), key);
            let child = tree.load_child(&node, idx)?;
            stack.push((node, idx));
            node = child;
        }
        if node.level() != level {
            return Err(TreeError::CorruptTree(*root));
        }
        Ok(LevelCursor {
            tree,
            level,
            stack,
            current: node,
        })
    }

    fn peek_next_first_key(&self) -> Option<&[u8]> {
        self.stack.iter().rev().find_map(|(n, idx)| {
            n.children()
                .get(idx + 1)
                .map(|c| c.first_key.as_slice())
        })
    }

    fn advance(&mut self) -> Result<(), TreeError> {
        loop {
            let (n, idx) = self.stack.last_mut().expect("advance past last node");
            if *idx + 1 < n.children().len() {
                *idx += 1;
                break;
            }
            self.stack.pop();
        }
        let (parent, idx) = self.stack.last().expect("non-empty after search");
        let mut node = self.tree.load_child(parent, *idx)?;
        while node.level() > self.level {
            let child = self.tree.load_child(&node, 0)?;
            self.stack.push((node, 0));
            node = child;
        }
        self.current = node;
        Ok(())
    }
}
