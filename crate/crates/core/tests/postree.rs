use std::collections::BTreeMap;
use std::sync::Arc;

use glassdb::postree::{chunk_entries, ChunkConfig, Entry, MemStore, NodeStore, PosNode, PosTree, TreeRoot};
use glassdb::Hash;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};

const P: u128 = (1 << 61) - 1;
const B: u128 = 0x1_0000_01b3;

/// Serializes a leaf entry from first principles: each field is a 4-byte
/// big-endian length then the bytes; a missing prev hash is a zero length.
fn oracle_entry_bytes(e: &Entry) -> Vec<u8> {
    let mut out = Vec::new();
    let prev: &[u8] = match &e.prev_hash {
        Some(h) => h.as_bytes(),
        None => &[],
    };
    for field in [&e.key[..], &e.value[..], prev] {
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

/// Sum over bytes of (b + 1) * BASE^(n-1-i) mod P, evaluated right to left
/// with explicit powers rather than Horner's rule.
fn oracle_hash(bytes: &[u8]) -> u64 {
    let mut acc = 0u128;
    let mut pow = 1u128;
    for &b in bytes.iter().rev() {
        acc = (acc + (b as u128 + 1) * pow) % P;
        pow = pow * B % P;
    }
    acc as u64
}

/// Indices (exclusive ends) at which nodes close.
fn oracle_boundaries(entries: &[Entry], cfg: ChunkConfig) -> Vec<usize> {
    let mask = (1u64 << cfg.pattern_bits) - 1;
    let mut out = Vec::new();
    let mut start = 0;
    for (i, e) in entries.iter().enumerate() {
        let len = i + 1 - start;
        let hit = oracle_hash(&oracle_entry_bytes(e)) & mask == 0;
        if len >= cfg.max_entries || (len >= cfg.min_entries && hit) {
            out.push(i + 1);
            start = i + 1;
        }
    }
    if start < entries.len() {
        out.push(entries.len());
    }
    out
}

fn boundaries_of(nodes: &[PosNode]) -> Vec<usize> {
    nodes
        .iter()
        .scan(0, |acc, n| {
            *acc += n.len();
            Some(*acc)
        })
        .collect()
}

fn seeded_entries(seed: u64, n: usize) -> Vec<Entry> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    while map.len() < n {
        let k: [u8; 12] = rng.random();
        let vlen = rng.random_range(0..40);
        let v: Vec<u8> = (0..vlen).map(|_| rng.random()).collect();
        map.insert(k.to_vec(), v);
    }
    map.into_iter().map(|(k, v)| Entry::new(k, v)).collect()
}

fn tree() -> PosTree {
    PosTree::new(MemStore::shared(), ChunkConfig::default())
}

#[test]
fn boundaries_match_independent_oracle() {
    let cfg = ChunkConfig::default();
    let entries = seeded_entries(0x5eed, 10_000);
    let nodes = chunk_entries(&entries, cfg).unwrap();
    let got = boundaries_of(&nodes);
    let want = oracle_boundaries(&entries, cfg);
    assert_eq!(got, want);
    // Mean node size sits near 2^q once the minimum is added.
    let mean = 10_000.0 / got.len() as f64;
    assert!((20.0..60.0).contains(&mean), "mean node size {mean}");
}

#[test]
fn boundaries_match_oracle_with_prev_hashes_and_small_pattern() {
    let cfg = ChunkConfig::new(3, 2, 16).unwrap();
    let entries: Vec<Entry> = seeded_entries(7, 3_000)
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let prev = (i % 3 == 0).then(|| Hash::of(&i.to_be_bytes()));
            e.with_prev(prev)
        })
        .collect();
    let nodes = chunk_entries(&entries, cfg).unwrap();
    assert_eq!(boundaries_of(&nodes), oracle_boundaries(&entries, cfg));
}

#[test]
fn appending_past_last_boundary_keeps_earlier_boundaries() {
    let cfg = ChunkConfig::default();
    let base = seeded_entries(11, 2_000);
    let before = oracle_boundaries(&base, cfg);
    let closed: Vec<usize> = before
        .iter()
        .copied()
        .filter(|&b| b < base.len())
        .collect();
    let mut longer = base.clone();
    let last = longer.last().unwrap().key.clone();
    for i in 0..100u32 {
        let mut k = last.clone();
        k.extend_from_slice(&i.to_be_bytes());
        longer.push(Entry::new(k, format!("tail{i}")));
    }
    let after = boundaries_of(&chunk_entries(&longer, cfg).unwrap());
    assert_eq!(&after[..closed.len()], &closed[..]);
}

#[test]
fn batch_and_shuffled_incremental_builds_agree() {
    let t = tree();
    let entries = seeded_entries(99, 1_000);
    let batch = t.build(&entries).unwrap();

    let mut rng = StdRng::seed_from_u64(3);
    let mut shuffled = entries.clone();
    shuffled.shuffle(&mut rng);
    let mut root = TreeRoot::empty();
    for chunk in shuffled.chunks(100) {
        let mut part = chunk.to_vec();
        part.sort_by(|a, b| a.key.cmp(&b.key));
        root = t.update(&root, &part).unwrap();
    }
    assert_eq!(root, batch);
}

#[test]
fn exhaustive_lookup() {
    let t = tree();
    let entries = seeded_entries(5, 500);
    let root = t.build(&entries).unwrap();
    let height = t.height(&root).unwrap();
    for e in &entries {
        let l = t.lookup(&root, &e.key).unwrap();
        assert_eq!(l.entry.as_ref(), Some(e));
        assert_eq!(l.path.len(), height);
        assert_eq!(l.path[0].hash(), root.root_hash);
    }
    let l = t.lookup(&root, b"\xff\xff\xff absent").unwrap();
    assert!(l.entry.is_none());
    assert_eq!(l.path.len(), height);
}

#[test]
fn copy_on_write_reuses_untouched_nodes() {
    let store = Arc::new(MemStore::new());
    let t = PosTree::new(store.clone(), ChunkConfig::default());
    let entries = seeded_entries(21, 20_000);
    let root = t.build(&entries).unwrap();
    let height = t.height(&root).unwrap() as u64;
    let old_nodes: std::collections::HashSet<Hash> = t.node_hashes(&root).unwrap().into_iter().collect();

    let mut rng = StdRng::seed_from_u64(8);
    for k in [1usize, 5, 25] {
        let mut upd: Vec<Entry> = entries
            .sample(&mut rng, k)
            .map(|e| {
                let prev = t.lookup(&root, &e.key).unwrap().path.last().unwrap().hash();
                Entry::new(e.key.clone(), b"fresh".to_vec()).with_prev(Some(prev))
            })
            .collect();
        upd.sort_by(|a, b| a.key.cmp(&b.key));
        let before = store.write_count();
        let new_root = t.update(&root, &upd).unwrap();
        let written = store.write_count() - before;
        assert!(
            written <= k as u64 * height + 2 * height,
            "k={k}: {written} new nodes, height {height}"
        );
        let new_nodes: Vec<Hash> = t.node_hashes(&new_root).unwrap();
        let reused = new_nodes.iter().filter(|h| old_nodes.contains(h)).count();
        assert!(reused + written as usize >= new_nodes.len());
        // History stays readable.
        assert_eq!(t.get(&root, &upd[0].key).unwrap().unwrap().value, entries.iter().find(|e| e.key == upd[0].key).unwrap().value);
        assert_eq!(t.get(&new_root, &upd[0].key).unwrap().unwrap().value, b"fresh");
    }
}

#[test]
fn node_store_holds_every_node_by_hash() {
    let store = MemStore::shared();
    let t = PosTree::new(store.clone(), ChunkConfig::default());
    let root = t.build(&seeded_entries(4, 3_000)).unwrap();
    for h in t.node_hashes(&root).unwrap() {
        let n = store.get_node(&h).unwrap().unwrap();
        assert_eq!(n.hash(), h);
    }
}

fn arb_map(max: usize) -> impl Strategy<Value = BTreeMap<Vec<u8>, Vec<u8>>> {
    prop::collection::btree_map(
        prop::collection::vec(any::<u8>(), 1..6),
        prop::collection::vec(any::<u8>(), 0..6),
        0..max,
    )
}

fn to_entries(m: &BTreeMap<Vec<u8>, Vec<u8>>) -> Vec<Entry> {
    m.iter().map(|(k, v)| Entry::new(k.clone(), v.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn update_equals_rebuild(base in arb_map(200), upd in arb_map(200)) {
        let t = tree();
        let r0 = t.build(&to_entries(&base)).unwrap();
        let r1 = t.update(&r0, &to_entries(&upd)).unwrap();
        let mut merged = base.clone();
        merged.extend(upd);
        let expect = t.build(&to_entries(&merged)).unwrap();
        prop_assert_eq!(r1, expect);
    }

    #[test]
    fn insertion_order_does_not_matter(
        m in arb_map(600),
        seed in any::<u64>(),
        small in any::<bool>(),
    ) {
        let cfg = if small { ChunkConfig::new(2, 2, 6).unwrap() } else { ChunkConfig::default() };
        let t = PosTree::new(MemStore::shared(), cfg);
        let entries = to_entries(&m);
        let batch = t.build(&entries).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut order = entries.clone();
        order.shuffle(&mut rng);
        let mut root = TreeRoot::empty();
        let mut rest = &order[..];
        while !rest.is_empty() {
            let n = rng.random_range(1..=rest.len().min(40));
            let mut part = rest[..n].to_vec();
            part.sort_by(|a, b| a.key.cmp(&b.key));
            root = t.update(&root, &part).unwrap();
            rest = &rest[n..];
        }
        prop_assert_eq!(root, batch);
    }

    #[test]
    fn hashing_is_deterministic_and_decode_round_trips(m in arb_map(100)) {
        let nodes = chunk_entries(&to_entries(&m), ChunkConfig::default()).unwrap();
        for n in nodes {
            let bytes = n.encode();
            prop_assert_eq!(PosNode::decode(&bytes).unwrap(), n.clone());
            prop_assert_eq!(n.hash(), Hash::of(&bytes));
        }
    }
}
