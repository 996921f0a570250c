use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use glassdb::ledger::{At, Ledger, LedgerConfig, TxnId};
use glassdb::txnmgr::{AbortReason, ClientKey, Promise, Transaction, TxnConfig, TxnError, TxnManager, Vote};
use parking_lot::Mutex;
use petgraph::algo::is_cyclic_directed;
use petgraph::graph::DiGraph;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

fn manager() -> TxnManager {
    TxnManager::new(Arc::new(Ledger::in_memory(LedgerConfig::default())), TxnConfig::default())
}

struct Client {
    key: ClientKey,
    ts: u64,
}

impl Client {
    fn new(seed: u8) -> Client {
        Client {
            key: ClientKey::from_seed([seed; 32]),
            ts: 0,
        }
    }

    fn tid(&mut self) -> TxnId {
        self.ts += 1;
        TxnId {
            client_id: self.key.client_id(),
            client_ts: self.ts,
            counter: 0,
        }
    }

    fn txn(&mut self, reads: &[(&str, u64)], writes: &[(&str, &str)]) -> Transaction {
        let tid = self.tid();
        Transaction::sign(
            &self.key,
            tid,
            reads.iter().map(|(k, v)| (k.as_bytes().to_vec(), *v)).collect(),
            writes
                .iter()
                .map(|(k, v)| (k.as_bytes().to_vec(), v.as_bytes().to_vec()))
                .collect(),
        )
    }
}

fn run(m: &TxnManager, t: Transaction) -> Arc<Promise> {
    let tid = t.tid;
    assert_eq!(m.prepare(t).unwrap(), Vote::Commit);
    m.commit(tid).unwrap()
}

fn value(m: &TxnManager, k: &str) -> Option<(Vec<u8>, u64)> {
    m.read(k.as_bytes(), At::Latest).unwrap()
}

#[test]
fn lone_transaction_commits_with_next_block() {
    let m = manager();
    let mut c = Client::new(1);
    let p = run(&m, c.txn(&[("a", 0)], &[("a", "1")]));
    assert_eq!(p.writes[0].block_no, 1);
    assert_eq!(value(&m, "a"), Some((b"1".to_vec(), 1)));
    // The ledger is untouched until a tick.
    assert_eq!(m.ledger().head_block(), 0);
    m.persist_tick(5).unwrap();
    let p2 = run(&m, c.txn(&[], &[("b", "1")]));
    assert_eq!(p2.writes[0].block_no, 2);
    assert_eq!(p2.digest, m.ledger().digest());
}

#[test]
fn concurrent_writers_of_one_key() {
    let m = manager();
    let (mut a, mut b) = (Client::new(1), Client::new(2));
    let ta = a.txn(&[], &[("k", "a")]);
    let tb = b.txn(&[], &[("k", "b")]);
    let (ida, idb) = (ta.tid, tb.tid);
    assert_eq!(m.prepare(ta).unwrap(), Vote::Commit);
    assert!(matches!(
        m.prepare(tb.clone()).unwrap(),
        Vote::Abort(AbortReason::Conflict { holder, .. }) if holder == ida
    ));
    // Once A is aborted, B's retry goes through.
    m.abort(ida).unwrap();
    assert_eq!(m.prepare(tb).unwrap(), Vote::Commit);
    m.commit(idb).unwrap();
    assert_eq!(value(&m, "k").unwrap().0, b"b");
}

#[test]
fn sequential_commits_promise_consecutive_blocks() {
    let m = manager();
    let mut c = Client::new(1);
    let p1 = run(&m, c.txn(&[], &[("k", "1")]));
    let p2 = run(&m, c.txn(&[("k", p1.writes[0].block_no)], &[("k", "2")]));
    assert_eq!(p2.writes[0].block_no, p1.writes[0].block_no + 1);
    // A repeated commit replays the same promise.
    assert_eq!(m.commit(p2.tid).unwrap(), p2);
}

#[test]
fn abort_discards_writes_and_is_idempotent() {
    let m = manager();
    let mut c = Client::new(1);
    let t = c.txn(&[], &[("k", "1")]);
    let tid = t.tid;
    assert_eq!(m.prepare(t.clone()).unwrap(), Vote::Commit);
    m.abort(tid).unwrap();
    m.abort(tid).unwrap();
    assert_eq!(value(&m, "k"), None);
    assert!(m.locked_keys().is_empty());
    assert!(matches!(m.commit(tid), Err(TxnError::AlreadyAborted(_))));
    assert_eq!(m.prepare(t).unwrap(), Vote::Abort(AbortReason::Decided));
    let unknown = c.tid();
    m.abort(unknown).unwrap();
    assert!(matches!(m.commit(c.tid()), Err(TxnError::NotFound(_))));
}

#[test]
fn stale_reads_and_bad_signatures_are_refused() {
    let m = manager();
    let mut c = Client::new(1);
    run(&m, c.txn(&[], &[("k", "1")]));
    assert!(matches!(
        m.prepare(c.txn(&[("k", 0)], &[("j", "x")])).unwrap(),
        Vote::Abort(AbortReason::StaleRead { read: 0, current: 1, .. })
    ));
    let mut forged = c.txn(&[], &[("k", "2")]);
    forged.write_set[0].1 = b"3".to_vec();
    assert!(matches!(m.prepare(forged), Err(TxnError::BadSignature(_))));
}

#[test]
fn full_queue_aborts() {
    let ledger = Arc::new(Ledger::in_memory(LedgerConfig::default()));
    let m = TxnManager::new(
        ledger,
        TxnConfig {
            txn_queue_depth: 2,
            ..TxnConfig::default()
        },
    );
    let mut c = Client::new(1);
    assert_eq!(m.prepare(c.txn(&[], &[("a", "1")])).unwrap(), Vote::Commit);
    assert_eq!(m.prepare(c.txn(&[], &[("b", "1")])).unwrap(), Vote::Commit);
    assert_eq!(m.prepare(c.txn(&[], &[("c", "1")])).unwrap(), Vote::Abort(AbortReason::QueueFull));
}

#[test]
fn tick_layers_versions_into_blocks() {
    let m = manager();
    assert!(m.persist_tick(1).unwrap().is_empty());
    let mut c = Client::new(1);
    run(&m, c.txn(&[], &[("a", "a1"), ("b", "b1")]));
    run(&m, c.txn(&[("b", 1)], &[("b", "b2")]));
    let before = (value(&m, "a"), value(&m, "b"));
    let blocks = m.persist_tick(7).unwrap();
    assert_eq!(blocks.len(), 2);
    let l = m.ledger();
    assert_eq!(
        l.manifest(1).unwrap().iter().map(|(k, _)| k.clone()).collect::<Vec<_>>(),
        vec![b"a".to_vec(), b"b".to_vec()]
    );
    assert_eq!(l.manifest(2).unwrap().len(), 1);
    assert_eq!(l.get_versioned(b"b", At::Block(1)).unwrap().unwrap().0, b"b1");
    assert_eq!(m.pending_versions(), 0);
    assert_eq!((value(&m, "a"), value(&m, "b")), before);
}

#[test]
fn promises_name_landing_blocks() {
    let m = manager();
    let mut rng = StdRng::seed_from_u64(5);
    let mut c = Client::new(1);
    let mut promises = Vec::new();
    for i in 0..100 {
        let keys: Vec<String> = (0..rng.random_range(1..4)).map(|_| format!("k{}", rng.random_range(0..30))).collect();
        let writes: Vec<(&str, &str)> = keys.iter().map(|k| (k.as_str(), "v")).collect();
        promises.push(run(&m, c.txn(&[], &writes)));
        if i % 7 == 0 {
            m.persist_tick(i).unwrap();
        }
    }
    m.persist_tick(1000).unwrap();
    for p in promises {
        for w in &p.writes {
            let manifest = m.ledger().manifest(w.block_no).unwrap();
            assert!(manifest.contains(&(w.key.clone(), p.tid)), "{} not in block {}", p.tid, w.block_no);
        }
    }
}

#[test]
fn reads_match_shadow_map() {
    let m = manager();
    let mut rng = StdRng::seed_from_u64(8);
    let mut c = Client::new(1);
    let mut shadow: HashMap<String, String> = HashMap::new();
    for i in 0..1000u64 {
        let k = format!("k{}", rng.random_range(0..50));
        if rng.random_bool(0.4) {
            let v = format!("v{i}");
            run(&m, c.txn(&[], &[(&k, &v)]));
            shadow.insert(k, v);
        } else {
            let got = value(&m, &k).map(|(v, _)| String::from_utf8(v).unwrap());
            assert_eq!(got.as_ref(), shadow.get(&k));
        }
        if rng.random_bool(0.05) {
            m.persist_tick(i).unwrap();
        }
    }
}

#[test]
fn recovery_restores_unpersisted_and_prepared() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = LedgerConfig::default();
    let mut c = Client::new(1);
    let (held, promise) = {
        let (l, _) = Ledger::open(dir.path(), cfg).unwrap();
        let m = TxnManager::new(Arc::new(l), TxnConfig::default());
        run(&m, c.txn(&[], &[("a", "1")]));
        m.persist_tick(1).unwrap();
        let p = run(&m, c.txn(&[("a", 1)], &[("a", "2"), ("b", "1")]));
        let held = c.txn(&[], &[("z", "1")]);
        assert_eq!(m.prepare(held.clone()).unwrap(), Vote::Commit);
        (held, p)
    };
    let (l, report) = Ledger::open(dir.path(), cfg).unwrap();
    let m = TxnManager::recover(Arc::new(l), TxnConfig::default(), &report.records).unwrap();
    assert_eq!(value(&m, "a"), Some((b"2".to_vec(), 2)));
    assert_eq!(m.promise(&promise.tid).unwrap().writes, promise.writes);
    assert!(m.locked_keys().contains(&b"z".to_vec()));
    let mut other = Client::new(2);
    assert!(matches!(m.prepare(other.txn(&[], &[("z", "x")])).unwrap(), Vote::Abort(_)));
    m.commit(held.tid).unwrap();
    m.persist_tick(2).unwrap();
    assert_eq!(m.ledger().get_latest(b"b").unwrap().unwrap(), (b"1".to_vec(), 2));
    assert_eq!(m.ledger().get_latest(b"z").unwrap().unwrap().1, 3);
}

/// Trace entry of a committed transaction.
struct Committed {
    reads: Vec<(Vec<u8>, u64)>,
    writes: Vec<(Vec<u8>, u64)>,
}

/// Direct serialization graph from observed versions: version order per
/// key is block order, a read of version v follows v's writer and
/// precedes the writer of the next version.
fn serialization_graph_is_acyclic(trace: &[Committed]) -> bool {
    let mut g = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..trace.len()).map(|i| g.add_node(i)).collect();
    let mut versions: HashMap<&[u8], BTreeMap<u64, usize>> = HashMap::new();
    for (i, t) in trace.iter().enumerate() {
        for (k, b) in &t.writes {
            versions.entry(k).or_default().insert(*b, i);
        }
    }
    for vs in versions.values() {
        let order: Vec<_> = vs.values().collect();
        for w in order.windows(2) {
            g.add_edge(nodes[*w[0]], nodes[*w[1]], ());
        }
    }
    for (i, t) in trace.iter().enumerate() {
        for (k, v) in &t.reads {
            let Some(vs) = versions.get(k.as_slice()) else { continue };
            if let Some(&w) = vs.get(v) {
                if w != i {
                    g.add_edge(nodes[w], nodes[i], ());
                }
            }
            if let Some((_, &next)) = vs.range(v + 1..).next() {
                if next != i {
                    g.add_edge(nodes[i], nodes[next], ());
                }
            }
        }
    }
    !is_cyclic_directed(&g)
}

#[test]
fn concurrent_transfers_are_serializable() {
    let m = Arc::new(manager());
    let accounts = 20;
    let mut setup = Client::new(99);
    let init: Vec<(String, String)> = (0..accounts).map(|i| (format!("acct{i}"), "1000".to_string())).collect();
    let w: Vec<(&str, &str)> = init.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    run(&m, setup.txn(&[], &w));
    let trace = Arc::new(Mutex::new(Vec::new()));
    let persister = m.spawn_persister();
    std::thread::scope(|s| {
        for c in 0..8u8 {
            let m = m.clone();
            let trace = trace.clone();
            s.spawn(move || {
                let mut rng = StdRng::seed_from_u64(c as u64);
                let mut client = Client::new(c);
                let mut done = 0;
                while done < 150 {
                    let a = format!("acct{}", rng.random_range(0..accounts));
                    let b = format!("acct{}", rng.random_range(0..accounts));
                    if a == b {
                        continue;
                    }
                    let (va, ra) = m.read(a.as_bytes(), At::Latest).unwrap().unwrap();
                    let (vb, rb) = m.read(b.as_bytes(), At::Latest).unwrap().unwrap();
                    let (va, vb): (i64, i64) = (
                        String::from_utf8(va).unwrap().parse().unwrap(),
                        String::from_utf8(vb).unwrap().parse().unwrap(),
                    );
                    let amt = rng.random_range(1..50);
                    let (na, nb) = ((va - amt).to_string(), (vb + amt).to_string());
                    let t = client.txn(&[(&a, ra), (&b, rb)], &[(&a, &na), (&b, &nb)]);
                    let tid = t.tid;
                    let reads = t.read_set.clone();
                    match m.prepare(t).unwrap() {
                        Vote::Commit => {
                            let p = m.commit(tid).unwrap();
                            let writes = p.writes.iter().map(|w| (w.key.clone(), w.block_no)).collect();
                            trace.lock().push(Committed { reads, writes });
                            done += 1;
                        }
                        Vote::Abort(_) => m.abort(tid).unwrap(),
                    }
                }
            });
        }
    });
    persister.stop();
    assert_eq!(m.pending_versions(), 0);
    let total: i64 = (0..accounts)
        .map(|i| {
            let (v, _) = m.ledger().get_latest(format!("acct{i}").as_bytes()).unwrap().unwrap();
            String::from_utf8(v).unwrap().parse::<i64>().unwrap()
        })
        .sum();
    assert_eq!(total, 1000 * accounts as i64);
    let trace = trace.lock();
    assert_eq!(trace.len(), 8 * 150);
    assert!(serialization_graph_is_acyclic(&trace));
}
