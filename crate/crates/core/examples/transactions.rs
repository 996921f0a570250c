//! Optimistic concurrency on one shard: a stale read aborts, commits get
//! promises naming their future block, and a persist tick keeps them.

use std::sync::Arc;

use glassdb::ledger::{At, Ledger, LedgerConfig, TxnId};
use glassdb::txnmgr::{ClientKey, Transaction, TxnConfig, TxnManager, Vote};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = TxnManager::new(Arc::new(Ledger::in_memory(LedgerConfig::default())), TxnConfig::default());
    let key = ClientKey::from_seed([1; 32]);
    let tid = |ts| TxnId {
        client_id: key.client_id(),
        client_ts: ts,
        counter: 0,
    };
    let kv = |k: &str, v: &str| (k.as_bytes().to_vec(), v.as_bytes().to_vec());

    let t1 = Transaction::sign(&key, tid(1), vec![], vec![kv("x", "1")]);
    assert_eq!(m.prepare(t1)?, Vote::Commit);
    let p1 = m.commit(tid(1))?;
    println!("t1 promised block {}", p1.due_block());

    let (_, seen) = m.read(b"x", At::Latest)?.unwrap();
    let t2 = Transaction::sign(&key, tid(2), vec![(b"x".to_vec(), seen)], vec![kv("x", "2")]);
    let t3 = Transaction::sign(&key, tid(3), vec![(b"x".to_vec(), seen)], vec![kv("x", "3")]);
    println!("t2 vote: {:?}", m.prepare(t2)?);
    println!("t3 vote while t2 holds x: {:?}", m.prepare(t3)?);
    m.abort(tid(3))?;
    let p2 = m.commit(tid(2))?;
    println!("t2 promised block {}", p2.due_block());

    for (block, digest) in m.persist_tick(1_000)? {
        println!("persisted block {} with {} txns -> {digest}", block.block_no, block.txn_ids.len());
    }
    let latest = m.ledger().get_latest(b"x")?.map(|(v, b)| (String::from_utf8_lossy(&v).into_owned(), b));
    println!("x = {latest:?}");
    Ok(())
}
