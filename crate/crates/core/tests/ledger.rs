use std::collections::BTreeMap;
use std::sync::Arc;

use glassdb::ledger::{
    At, BatchWrite, CrashPoint, Ledger, LedgerConfig, LedgerError, RecoveryStatus, TxnId, WriteBatch, NODES_FILE,
    WAL_FILE,
};
use glassdb::postree::{FaultyStore, FileStore, NodeStore};
use glassdb::Hash;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

fn tid(n: u64) -> TxnId {
    TxnId {
        client_id: 1,
        client_ts: n,
        counter: 0,
    }
}

fn batch(n: u64, kvs: &[(&str, &str)]) -> WriteBatch {
    WriteBatch::new(
        kvs.iter()
            .map(|(k, v)| BatchWrite {
                key: k.as_bytes().to_vec(),
                value: v.as_bytes().to_vec(),
                tid: tid(n),
            })
            .collect(),
    )
}

fn owned_batch(n: u64, kvs: Vec<(Vec<u8>, Vec<u8>)>) -> WriteBatch {
    WriteBatch::new(
        kvs.into_iter()
            .map(|(key, value)| BatchWrite { key, value, tid: tid(n) })
            .collect(),
    )
}

fn key(i: usize) -> String {
    format!("K{i:02}")
}

#[test]
fn first_block_is_one_and_moves_digest() {
    let l = Ledger::in_memory(LedgerConfig::default());
    assert_eq!(l.digest().block_no, 0);
    assert_eq!(l.digest().digest, Hash::of(b""));
    let (b, d) = l.append_block(batch(1, &[("a", "1")]), 10).unwrap();
    assert_eq!(b.block_no, 1);
    assert_eq!(d.block_no, 1);
    assert_ne!(d.digest, Hash::of(b""));
    assert_eq!(b.txn_ids, vec![tid(1)]);
    assert!(matches!(
        l.append_block(WriteBatch::default(), 11),
        Err(LedgerError::InvalidBatch(_))
    ));
    assert!(matches!(
        l.append_block(batch(2, &[("x", "1"), ("x", "2")]), 11),
        Err(LedgerError::InvalidBatch(_))
    ));
    assert_eq!(l.head_block(), 1);
}

/// The worked example: sixteen keys in the ledger, then K9 updated from V9¹
/// to V9² in block B.
#[test]
fn worked_example_update_of_k9() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let initial: Vec<(String, String)> = (1..=16).map(|i| (key(i), format!("V{i}^1"))).collect();
    let refs: Vec<(&str, &str)> = initial.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let (blk1, d1) = l.append_block(batch(1, &refs), 1_000).unwrap();
    let b_minus_1 = d1.block_no;

    let state1 = l.state_root();
    let leaf_b = l.state_tree().lookup(&state1, b"K09").unwrap().path.last().unwrap().clone();
    let hb = leaf_b.hash();

    let (blk2, d2) = l.append_block(batch(2, &[("K09", "V9^2")]), 2_000).unwrap();
    assert_eq!(blk2.block_no, b_minus_1 + 1);
    assert_eq!(blk2.timestamp_ms, 2_000);
    assert_ne!(d2.digest, d1.digest);

    // New leaf b' holds (K9, V9², H_b).
    let state2 = l.state_root();
    let found = l.state_tree().lookup(&state2, b"K09").unwrap();
    let e = found.entry.unwrap();
    assert_eq!(e.value, b"V9^2");
    assert_eq!(e.prev_hash, Some(hb));

    // Old version still reachable at B-1; block B-1 still readable.
    assert_eq!(
        l.get_versioned(b"K09", At::Block(b_minus_1)).unwrap(),
        Some((b"V9^1".to_vec(), 1))
    );
    assert_eq!(l.get_versioned(b"K09", At::Block(2)).unwrap(), Some((b"V9^2".to_vec(), 2)));
    assert_eq!(l.block(1).unwrap(), blk1);
    assert_eq!(l.get_block(1).unwrap().1.len(), 1);
    assert_eq!(l.history(b"K09", 10).unwrap(), vec![b"V9^2".to_vec(), b"V9^1".to_vec()]);
    assert_eq!(l.history(b"K03", 10).unwrap(), vec![b"V3^1".to_vec()]);
}

#[test]
fn sequential_single_key_batches_match_map_oracle() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let mut rng = StdRng::seed_from_u64(50);
    let mut oracle = BTreeMap::new();
    let mut blocks = Vec::new();
    for n in 1..=50u64 {
        let k = format!("key{}", rng.random_range(0..20)).into_bytes();
        let v = format!("val{n}").into_bytes();
        oracle.insert(k.clone(), v.clone());
        let (b, _) = l.append_block(owned_batch(n, vec![(k, v)]), n * 10).unwrap();
        blocks.push(b);
    }
    assert_eq!(l.head_block(), 50);
    let state = l.state_root();
    let all: BTreeMap<Vec<u8>, Vec<u8>> = l
        .state_tree()
        .entries(&state)
        .unwrap()
        .into_iter()
        .map(|e| (e.key, e.value))
        .collect();
    assert_eq!(all, oracle);
    for b in &blocks {
        assert_eq!(&l.block(b.block_no).unwrap(), b);
    }
    assert_eq!(l.block(50).unwrap().state_root, state.root_hash);
    assert!(matches!(l.get_block(51), Err(LedgerError::BlockNotFound(51))));
    assert!(matches!(l.get_block(0), Err(LedgerError::BlockNotFound(0))));
}

#[test]
fn versioned_reads_match_per_block_snapshots() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let mut rng = StdRng::seed_from_u64(30);
    let mut snapshots: Vec<BTreeMap<Vec<u8>, (Vec<u8>, u64)>> = vec![BTreeMap::new()];
    for n in 1..=30u64 {
        let mut cur = snapshots.last().unwrap().clone();
        let mut kvs = BTreeMap::new();
        for _ in 0..rng.random_range(1..8) {
            let k = format!("k{}", rng.random_range(0..25)).into_bytes();
            kvs.insert(k, format!("v{n}.{}", rng.random_range(0..1000)).into_bytes());
        }
        for (k, v) in &kvs {
            cur.insert(k.clone(), (v.clone(), n));
        }
        l.append_block(owned_batch(n, kvs.into_iter().collect()), 100 * n).unwrap();
        snapshots.push(cur);
    }
    for _ in 0..400 {
        let b = rng.random_range(1..=30u64);
        let k = format!("k{}", rng.random_range(0..26)).into_bytes();
        let expect = snapshots[b as usize].get(&k).cloned();
        assert_eq!(l.get_versioned(&k, At::Block(b)).unwrap(), expect, "block {b}");
        // Timestamps 100*b .. 100*b+99 resolve to block b.
        let t = 100 * b + rng.random_range(0..100);
        assert_eq!(l.get_versioned(&k, At::Time(t)).unwrap(), expect);
    }
    assert_eq!(l.get_versioned(b"k1", At::Time(99)).unwrap(), None);
    assert!(l.get_versioned(b"k1", At::Block(31)).is_err());
}

#[test]
fn version_chain_lists_all_values() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let filler: Vec<(String, String)> = (0..300).map(|i| (format!("f{i:03}"), "x".into())).collect();
    let refs: Vec<(&str, &str)> = filler.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    l.append_block(batch(0, &refs), 1).unwrap();
    for n in 1..=12u64 {
        let v = format!("ytd{n}");
        l.append_block(batch(n, &[("w_ytd", &v), ("f150", &v)]), 1 + n).unwrap();
    }
    let hist = l.history(b"w_ytd", 10).unwrap();
    let expect: Vec<Vec<u8>> = (3..=12).rev().map(|n| format!("ytd{n}").into_bytes()).collect();
    assert_eq!(hist, expect);
    assert_eq!(l.history(b"f150", 100).unwrap().len(), 13);
    assert!(l.history(b"nope", 10).unwrap().is_empty());
}

fn blocks_for_recovery() -> Vec<WriteBatch> {
    let mut rng = StdRng::seed_from_u64(77);
    (1..=8u64)
        .map(|n| {
            let mut kvs = BTreeMap::new();
            for _ in 0..rng.random_range(20..200) {
                kvs.insert(
                    format!("key{:05}", rng.random_range(0..3000)).into_bytes(),
                    format!("v{n}").into_bytes(),
                );
            }
            owned_batch(n, kvs.into_iter().collect())
        })
        .collect()
}

fn control_digest(batches: &[WriteBatch]) -> glassdb::ledger::LedgerDigest {
    let l = Ledger::in_memory(LedgerConfig::default());
    for (i, b) in batches.iter().enumerate() {
        l.append_block(b.clone(), 1000 + i as u64).unwrap();
    }
    l.digest()
}

#[test]
fn reopen_without_crash_restores_digest() {
    let dir = tempfile::tempdir().unwrap();
    let batches = blocks_for_recovery();
    let d = {
        let (l, report) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
        assert_eq!(report.status(), RecoveryStatus::Clean);
        for (i, b) in batches.iter().enumerate() {
            l.append_block(b.clone(), 1000 + i as u64).unwrap();
        }
        l.digest()
    };
    assert_eq!(d, control_digest(&batches));
    let (l, report) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
    assert_eq!(l.digest(), d);
    assert_eq!(report.replayed_blocks, 8);
    assert_eq!(report.reused_blocks, 8);
    assert_eq!(l.store().write_count(), 0, "recovery rewrote nodes");
    assert_eq!(l.history(b"key00001", 1).unwrap(), {
        let c = Ledger::in_memory(LedgerConfig::default());
        for (i, b) in batches.iter().enumerate() {
            c.append_block(b.clone(), 1000 + i as u64).unwrap();
        }
        c.history(b"key00001", 1).unwrap()
    });
}

#[test]
fn crash_after_state_tree_reuses_its_nodes() {
    let batches = blocks_for_recovery();
    // Count the state-tree writes of block 5 on a throwaway copy.
    let probe = Ledger::in_memory(LedgerConfig::default());
    for (i, b) in batches[..4].iter().enumerate() {
        probe.append_block(b.clone(), 1000 + i as u64).unwrap();
    }
    let before = probe.store().write_count();
    let state_before = probe.state_root();
    let mut writes = batches[4].writes.clone();
    writes.sort_by(|a, b| a.key.cmp(&b.key));
    let entries: Vec<_> = writes
        .iter()
        .map(|w| {
            let f = probe.state_tree().lookup(&state_before, &w.key).unwrap();
            let prev = f.entry.is_some().then(|| f.path.last().unwrap().hash());
            glassdb::postree::Entry::new(w.key.clone(), w.value.clone()).with_prev(prev)
        })
        .collect();
    probe.state_tree().update(&state_before, &entries).unwrap();
    let lower_writes = probe.store().write_count() - before;
    assert!(lower_writes > 0);

    let dir = tempfile::tempdir().unwrap();
    {
        let file: Arc<dyn NodeStore> = Arc::new(FileStore::open(dir.path().join(NODES_FILE)).unwrap());
        let faulty = Arc::new(FaultyStore::new(file));
        let (l, _) = Ledger::open_with_store(dir.path(), LedgerConfig::default(), faulty.clone()).unwrap();
        for (i, b) in batches[..4].iter().enumerate() {
            l.append_block(b.clone(), 1000 + i as u64).unwrap();
        }
        faulty.fail_after(lower_writes);
        let err = l.append_block(batches[4].clone(), 1004).unwrap_err();
        assert!(matches!(err, LedgerError::Store(_)), "{err}");
        assert_eq!(l.head_block(), 4);
    }
    let (l, report) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
    assert_eq!(l.head_block(), 5);
    assert_eq!(report.reused_blocks, 4);
    // Only the data block and block-tree path are new.
    let recovery_writes = l.store().write_count();
    let upper_height = l.block_tree().height(&l.block_tree_at(5).unwrap()).unwrap() as u64;
    assert!(recovery_writes <= 1 + upper_height, "{recovery_writes} writes");
    for (i, b) in batches[5..].iter().enumerate() {
        l.append_block(b.clone(), 1005 + i as u64).unwrap();
    }
    assert_eq!(l.digest(), control_digest(&batches));
}

#[test]
fn crash_at_fixed_points_recovers_to_control() {
    let batches = blocks_for_recovery();
    let control = control_digest(&batches);
    for point in [CrashPoint::AfterWal, CrashPoint::BeforeBlockMap] {
        let dir = tempfile::tempdir().unwrap();
        {
            let (l, _) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
            for (i, b) in batches[..3].iter().enumerate() {
                l.append_block(b.clone(), 1000 + i as u64).unwrap();
            }
            l.inject_crash(Some(point));
            assert!(matches!(
                l.append_block(batches[3].clone(), 1003),
                Err(LedgerError::InjectedCrash(p)) if p == point
            ));
        }
        let (l, _) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
        assert_eq!(l.head_block(), 4, "{point:?}");
        for (i, b) in batches[4..].iter().enumerate() {
            l.append_block(b.clone(), 1004 + i as u64).unwrap();
        }
        assert_eq!(l.digest(), control, "{point:?}");
    }
}

#[test]
fn crash_at_random_store_writes_recovers_to_control() {
    let batches = blocks_for_recovery();
    let control = control_digest(&batches);
    let mut rng = StdRng::seed_from_u64(1234);
    for trial in 0..10 {
        let dir = tempfile::tempdir().unwrap();
        let crash_block = rng.random_range(0..batches.len());
        let budget = rng.random_range(0..40);
        {
            let file: Arc<dyn NodeStore> = Arc::new(FileStore::open(dir.path().join(NODES_FILE)).unwrap());
            let faulty = Arc::new(FaultyStore::new(file));
            let (l, _) = Ledger::open_with_store(dir.path(), LedgerConfig::default(), faulty.clone()).unwrap();
            for (i, b) in batches[..crash_block].iter().enumerate() {
                l.append_block(b.clone(), 1000 + i as u64).unwrap();
            }
            faulty.fail_after(budget);
            let _ = l.append_block(batches[crash_block].clone(), 1000 + crash_block as u64);
        }
        let (l, _) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
        let resumed = l.head_block() as usize;
        assert!(resumed == crash_block + 1, "trial {trial}: head {resumed}");
        for (i, b) in batches.iter().enumerate().skip(resumed) {
            l.append_block(b.clone(), 1000 + i as u64).unwrap();
        }
        assert_eq!(l.digest(), control, "trial {trial}");
    }
}

#[test]
fn torn_wal_tail_is_reported_and_digest_kept() {
    let dir = tempfile::tempdir().unwrap();
    let batches = blocks_for_recovery();
    let d = {
        let (l, _) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
        for (i, b) in batches[..2].iter().enumerate() {
            l.append_block(b.clone(), 1000 + i as u64).unwrap();
        }
        l.digest()
    };
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(dir.path().join(WAL_FILE))
            .unwrap();
        f.write_all(&[0, 0, 1, 0, 9, 9]).unwrap();
    }
    let (l, report) = Ledger::open(dir.path(), LedgerConfig::default()).unwrap();
    assert_eq!(report.status(), RecoveryStatus::RecoveredWithTruncation);
    assert_eq!(report.wal_truncated_bytes, 6);
    assert_eq!(l.digest(), d);
}
