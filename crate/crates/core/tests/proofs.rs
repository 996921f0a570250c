use std::collections::BTreeMap;

use glassdb::ledger::{BatchWrite, Ledger, LedgerConfig, LedgerDigest, TxnId, WriteBatch};
use glassdb::postree::ChunkConfig;
use glassdb::proofs::{
    check_append, prove_append, prove_bundle, prove_current, prove_inclusion, verify_append, verify_bundle,
    verify_current, verify_inclusion, AppendOnlyProof, Claim, CurrentValueProof, InclusionProof, ProofBundle,
    ProofError,
};
use glassdb::Hash;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

fn tid(n: u64) -> TxnId {
    TxnId {
        client_id: 7,
        client_ts: n,
        counter: 0,
    }
}

fn batch(n: u64, kvs: impl IntoIterator<Item = (Vec<u8>, Vec<u8>)>) -> WriteBatch {
    WriteBatch::new(
        kvs.into_iter()
            .map(|(key, value)| BatchWrite { key, value, tid: tid(n) })
            .collect(),
    )
}

fn kv(k: &str, v: &str) -> (Vec<u8>, Vec<u8>) {
    (k.as_bytes().to_vec(), v.as_bytes().to_vec())
}

/// Small nodes so even tiny ledgers have several levels.
fn narrow() -> LedgerConfig {
    let c = ChunkConfig::new(2, 2, 4).unwrap();
    LedgerConfig {
        state_chunking: c,
        block_chunking: c,
    }
}

/// Sixteen keys in block 1..=3 (filler blocks), then K09 updated.
fn worked_example() -> (Ledger, LedgerDigest, LedgerDigest) {
    let l = Ledger::in_memory(narrow());
    l.append_block(batch(1, (1..=16).map(|i| kv(&format!("K{i:02}"), &format!("V{i}^1")))), 10)
        .unwrap();
    l.append_block(batch(2, [kv("K01", "V1^2")]), 20).unwrap();
    l.append_block(batch(3, [kv("K02", "V2^2")]), 30).unwrap();
    let d1 = l.digest();
    l.append_block(batch(4, [kv("K09", "V9^2")]), 40).unwrap();
    let d2 = l.digest();
    (l, d1, d2)
}

fn pair(k: &str, v: &str) -> Vec<(Vec<u8>, Vec<u8>)> {
    vec![kv(k, v)]
}

#[test]
fn worked_example_inclusion_and_current() {
    let (l, d1, d2) = worked_example();
    let p = prove_inclusion(&l, &d1, d1.block_no, &[b"K09".to_vec()]).unwrap();
    // The proof is exactly the state path to K09 and the block-tree path.
    let state = l.block_tree_at(d1.block_no).unwrap();
    let upper_path = l.block_tree().lookup(&state, &d1.block_no.to_be_bytes()).unwrap().path;
    assert_eq!(p.upper.len(), upper_path.len());
    assert!(p.lower.len() >= 3, "state path of {} nodes", p.lower.len());
    assert!(verify_inclusion(&p, &d1, &pair("K09", "V9^1")));
    assert!(!verify_inclusion(&p, &d1, &pair("K09", "V9^2")));
    assert!(!verify_inclusion(&p, &d2, &pair("K09", "V9^1")));

    let c = prove_current(&l, &d2, &[b"K09".to_vec()]).unwrap();
    assert_eq!(c.0.value_of(b"K09"), Some(&b"V9^2"[..]));
    assert!(verify_current(&c, &d2, &pair("K09", "V9^2")));

    // The old value, honestly proven at B-1, is not current under D2.
    let stale = CurrentValueProof(prove_inclusion(&l, &d2, d1.block_no, &[b"K09".to_vec()]).unwrap());
    assert!(verify_inclusion(&stale.0, &d2, &pair("K09", "V9^1")));
    assert!(!verify_current(&stale, &d2, &pair("K09", "V9^1")));
}

#[test]
fn worked_example_append_only() {
    let (l, d1, d2) = worked_example();
    let p = prove_append(&l, &d1, &d2).unwrap();
    let height = l.block_tree().height(&l.block_tree_at(d2.block_no).unwrap()).unwrap();
    assert!(p.nodes.len() <= 2 * height);
    assert!(verify_append(&p, &d1, &d2));
    let id = prove_append(&l, &d2, &d2).unwrap();
    assert!(id.nodes.is_empty());
    assert!(verify_append(&id, &d2, &d2));
    // Reversed direction is refused.
    assert!(matches!(prove_append(&l, &d2, &d1), Err(ProofError::OutOfRange { .. })));
    let mut flipped = p.clone();
    std::mem::swap(&mut flipped.old, &mut flipped.new);
    assert!(!verify_append(&flipped, &d2, &d1));
}

#[test]
fn single_key_single_block_has_one_node_per_level() {
    let l = Ledger::in_memory(LedgerConfig::default());
    l.append_block(batch(1, [kv("k", "v")]), 1).unwrap();
    let d = l.digest();
    let p = prove_inclusion(&l, &d, 1, &[b"k".to_vec()]).unwrap();
    assert_eq!(p.node_count(), 2);
    assert!(verify_inclusion(&p, &d, &pair("k", "v")));
    // Written once: current proof is the inclusion proof at block 1.
    assert_eq!(prove_current(&l, &d, &[b"k".to_vec()]).unwrap().0, p);
}

#[test]
fn batched_proof_shares_nodes() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let keys: Vec<Vec<u8>> = (0..2000).map(|i| format!("key{i:05}").into_bytes()).collect();
    l.append_block(batch(1, keys.iter().map(|k| (k.clone(), b"v".to_vec()))), 1).unwrap();
    let d = l.digest();
    let eight: Vec<Vec<u8>> = keys.iter().step_by(97).take(8).cloned().collect();
    let batched = prove_inclusion(&l, &d, 1, &eight).unwrap();
    let singles: usize = eight
        .iter()
        .map(|k| prove_inclusion(&l, &d, 1, std::slice::from_ref(k)).unwrap().node_count())
        .sum();
    assert!(batched.node_count() < singles, "{} vs {singles}", batched.node_count());
    let expected: Vec<_> = eight.iter().map(|k| (k.clone(), b"v".to_vec())).collect();
    assert!(verify_inclusion(&batched, &d, &expected));
    assert!(!verify_inclusion(&batched, &d, &expected[..7]), "unused path accepted");
    assert!(matches!(
        prove_inclusion(&l, &d, 1, &[b"absent".to_vec()]),
        Err(ProofError::KeyNotFound { .. })
    ));
    assert!(matches!(
        prove_inclusion(&l, &d, 2, &eight),
        Err(ProofError::OutOfRange { .. })
    ));
}

#[test]
fn current_proofs_match_replay_oracle() {
    let l = Ledger::in_memory(LedgerConfig::default());
    let mut rng = StdRng::seed_from_u64(100);
    let mut oracle = BTreeMap::new();
    let keys: Vec<Vec<u8>> = (0..100).map(|i| format!("acct{i:03}").into_bytes()).collect();
    l.append_block(batch(0, keys.iter().map(|k| (k.clone(), b"0".to_vec()))), 1).unwrap();
    for k in &keys {
        oracle.insert(k.clone(), b"0".to_vec());
    }
    for n in 1..10u64 {
        let mut kvs = BTreeMap::new();
        for _ in 0..20 {
            let k = keys[rng.random_range(0..keys.len())].clone();
            kvs.insert(k, format!("{}", rng.random_range(0..10_000)).into_bytes());
        }
        oracle.extend(kvs.clone());
        l.append_block(batch(n, kvs), 1 + n).unwrap();
    }
    let d = l.digest();
    let p = prove_current(&l, &d, &keys).unwrap();
    let expected: Vec<_> = oracle.into_iter().collect();
    assert!(verify_current(&p, &d, &expected));
}

fn fifty_blocks(seed: u64) -> Ledger {
    let l = Ledger::in_memory(narrow());
    let mut rng = StdRng::seed_from_u64(seed);
    for n in 1..=50u64 {
        let kvs: BTreeMap<_, _> = (0..rng.random_range(1..6))
            .map(|_| kv(&format!("k{}", rng.random_range(0..40)), &format!("v{n}")))
            .collect();
        l.append_block(batch(n, kvs), n).unwrap();
    }
    l
}

#[test]
fn append_only_holds_for_every_pair() {
    let l = fifty_blocks(1);
    let head = l.digest();
    let height = l.block_tree().height(&l.block_tree_at(50).unwrap()).unwrap();
    for i in 0..=50u64 {
        for j in i..=50u64 {
            let (a, b) = (l.digest_at(i).unwrap(), l.digest_at(j).unwrap());
            let p = prove_append(&l, &a, &b).unwrap();
            assert!(p.nodes.len() <= 2 * height);
            if let Err(e) = check_append(&p, &a, &b) {
                panic!("{i} -> {j}: {e}");
            }
            // Round trip through the wire encoding.
            assert_eq!(AppendOnlyProof::decode(&p.encode()).unwrap(), p);
        }
    }
    assert!(verify_append(&prove_append(&l, &LedgerDigest::genesis(), &head).unwrap(), &LedgerDigest::genesis(), &head));
}

#[test]
fn append_only_is_transitive_on_sampled_triples() {
    let l = fifty_blocks(2);
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..200 {
        let mut t = [rng.random_range(0..=50u64), rng.random_range(0..=50u64), rng.random_range(0..=50u64)];
        t.sort();
        let d: Vec<_> = t.iter().map(|&b| l.digest_at(b).unwrap()).collect();
        let ij = prove_append(&l, &d[0], &d[1]).unwrap();
        let jk = prove_append(&l, &d[1], &d[2]).unwrap();
        assert!(verify_append(&ij, &d[0], &d[1]) && verify_append(&jk, &d[1], &d[2]));
        assert!(verify_append(&prove_append(&l, &d[0], &d[2]).unwrap(), &d[0], &d[2]));
    }
}

/// Two ledgers share 10 blocks, then diverge. No proof assembled from
/// either side's nodes connects a digest of one to a digest of the other.
#[test]
fn forked_histories_admit_no_append_proof() {
    let a = Ledger::in_memory(narrow());
    let b = Ledger::in_memory(narrow());
    for n in 1..=10u64 {
        let bt = batch(n, [kv(&format!("k{n}"), "same")]);
        a.append_block(bt.clone(), n).unwrap();
        b.append_block(bt, n).unwrap();
    }
    a.append_block(batch(11, [kv("x", "op1")]), 11).unwrap();
    b.append_block(batch(11, [kv("x", "op2")]), 11).unwrap();
    for n in 12..=20u64 {
        a.append_block(batch(n, [kv(&format!("a{n}"), "1")]), n).unwrap();
        b.append_block(batch(n, [kv(&format!("b{n}"), "1")]), n).unwrap();
    }
    let mut attempts = 0;
    for old_no in 11..=20u64 {
        for new_no in old_no..=20u64 {
            let old_a = a.digest_at(old_no).unwrap();
            let old_b = b.digest_at(old_no).unwrap();
            let new_a = a.digest_at(new_no).unwrap();
            let new_b = b.digest_at(new_no).unwrap();
            // Honest proofs inside each history, relabelled across the fork.
            for (src, old_real, old_fake, new) in [(&a, old_a, old_b, new_a), (&b, old_b, old_a, new_b)] {
                let honest = prove_append(src, &old_real, &new).unwrap();
                let mut forged = honest.clone();
                forged.old = old_fake;
                assert!(!verify_append(&forged, &old_fake, &new));
                // Mixing in the other side's nodes does not help.
                let other = if std::ptr::eq(src, &a) { &b } else { &a };
                let other_new = other.digest_at(new_no).unwrap();
                let theirs = prove_append(other, &old_fake, &other_new).unwrap();
                let mut mixed = forged.clone();
                mixed.nodes.extend(theirs.nodes.iter().cloned());
                mixed.nodes.sort_by_key(|n| n.hash());
                mixed.nodes.dedup_by_key(|n| n.hash());
                assert!(!verify_append(&mixed, &old_fake, &new));
                let mut swapped = theirs.clone();
                swapped.new = new;
                assert!(!verify_append(&swapped, &old_fake, &new));
                attempts += 3;
            }
        }
    }
    // Shared prefix still verifies across both.
    let common = a.digest_at(10).unwrap();
    assert_eq!(common, b.digest_at(10).unwrap());
    assert!(verify_append(&prove_append(&b, &common, &b.digest()).unwrap(), &common, &b.digest()));
    assert!(attempts > 300);
}

fn mutants(bytes: &[u8]) -> impl Iterator<Item = Vec<u8>> + '_ {
    (0..bytes.len()).flat_map(move |i| {
        (1..=255u8).map(move |x| {
            let mut m = bytes.to_vec();
            m[i] ^= x;
            m
        })
    })
}

#[test]
fn every_single_byte_mutation_is_rejected() {
    let (l, d1, d2) = worked_example();
    let keys = [b"K09".to_vec(), b"K10".to_vec()];
    let expected = vec![kv("K09", "V9^2"), kv("K10", "V10^1")];

    let inc = prove_inclusion(&l, &d2, d2.block_no, &keys).unwrap().encode();
    let mut accepted = 0;
    for m in mutants(&inc) {
        if InclusionProof::decode(&m).is_ok_and(|p| verify_inclusion(&p, &d2, &expected)) {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 0, "inclusion mutants accepted");

    let cur = prove_current(&l, &d2, &keys).unwrap().encode();
    for m in mutants(&cur) {
        if CurrentValueProof::decode(&m).is_ok_and(|p| verify_current(&p, &d2, &expected)) {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 0, "current-value mutants accepted");

    let app = prove_append(&l, &d1, &d2).unwrap().encode();
    for m in mutants(&app) {
        if AppendOnlyProof::decode(&m).is_ok_and(|p| verify_append(&p, &d1, &d2)) {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 0, "append-only mutants accepted");

    let claims = vec![
        Claim {
            block_no: 4,
            key: b"K09".to_vec(),
            value: b"V9^2".to_vec(),
        },
        Claim {
            block_no: 1,
            key: b"K09".to_vec(),
            value: b"V9^1".to_vec(),
        },
    ];
    let bun = prove_bundle(&l, &d2, &[(4, b"K09".to_vec()), (1, b"K09".to_vec())]).unwrap();
    assert!(verify_bundle(&bun, &d2, &claims));
    let bun = bun.encode();
    for m in mutants(&bun) {
        if ProofBundle::decode(&m).is_ok_and(|p| verify_bundle(&p, &d2, &claims)) {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 0, "bundle mutants accepted");
}

#[test]
fn bundle_spans_blocks_and_dedupes() {
    let l = fifty_blocks(9);
    let d = l.digest();
    let mut items = Vec::new();
    let mut claims = Vec::new();
    for b in [3u64, 10, 11, 12, 40, 50] {
        for (k, _) in l.manifest(b).unwrap() {
            let (v, _) = l.get_versioned(&k, glassdb::ledger::At::Block(b)).unwrap().unwrap();
            items.push((b, k.clone()));
            claims.push(Claim { block_no: b, key: k, value: v });
        }
    }
    let bundle = prove_bundle(&l, &d, &items).unwrap();
    assert!(verify_bundle(&bundle, &d, &claims));
    let separate: usize = items
        .iter()
        .map(|(b, k)| prove_inclusion(&l, &d, *b, std::slice::from_ref(k)).unwrap().encode().len())
        .sum();
    assert!(bundle.encode().len() < separate);
    assert_eq!(ProofBundle::decode(&bundle.encode()).unwrap(), bundle);
    // A claim the bundle does not cover fails; so does a bundle for another head.
    let mut extra = claims.clone();
    extra.push(Claim {
        block_no: 50,
        key: b"zzz".to_vec(),
        value: b"1".to_vec(),
    });
    assert!(!verify_bundle(&bundle, &d, &extra));
    assert!(!verify_bundle(&bundle, &l.digest_at(49).unwrap(), &claims));
}

#[test]
fn unknown_digest_is_not_found() {
    let (l, d1, _) = worked_example();
    let bogus = LedgerDigest {
        digest: Hash::of(b"elsewhere"),
        block_no: d1.block_no,
    };
    assert!(matches!(prove_append(&l, &bogus, &l.digest()), Err(ProofError::UnknownDigest(_))));
    assert!(matches!(
        prove_inclusion(&l, &bogus, 1, &[b"K01".to_vec()]),
        Err(ProofError::UnknownDigest(_))
    ));
}

/// Frozen vector: one key in one block. Values computed independently with
/// Python's hashlib from the byte layouts in PROOFS.md.
#[test]
fn frozen_single_key_vector() {
    let l = Ledger::in_memory(LedgerConfig::default());
    l.append_block(batch(1, [kv("k", "v")]), 1).unwrap();
    let p = prove_inclusion(&l, &l.digest(), 1, &[b"k".to_vec()]).unwrap();
    assert_eq!(
        hex::encode(p.block.state_root.as_bytes()),
        "c146c349ca0a9518923d24356f06b2e94cd7a22631e038079c24496855b3871d"
    );
    assert_eq!(
        hex::encode(p.block.hash().as_bytes()),
        "f97cef05b5d1cbe5db7f1246ce1aabdf223f97c851a7df5488b927b3d65a1358"
    );
    assert_eq!(
        hex::encode(l.digest().digest.as_bytes()),
        "0b33931d6d898490b04b8fd1083e59fedaaba80cba0dbbd7dea50fb7818d91ff"
    );
}
