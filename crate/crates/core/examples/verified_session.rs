//! A client session over three in-process shards: a cross-shard
//! transaction, deferred verification, and verified reads.

use std::sync::Arc;
use std::time::Duration;

use glassdb::client::{ClientError, InProcess, Session, SessionConfig, Transport};
use glassdb::shardserver::ShardNode;
use glassdb::txnmgr::ClientKey;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nodes: Vec<Arc<ShardNode>> = (0..3).map(|i| Arc::new(ShardNode::in_memory(i, 3))).collect();
    for n in &nodes {
        n.start_persister();
    }
    let transports = nodes
        .iter()
        .map(|n| Box::new(InProcess::new(n.clone())) as Box<dyn Transport>)
        .collect();
    let mut s = Session::new(
        ClientKey::from_seed([7; 32]),
        transports,
        SessionConfig {
            delay_ms: 50,
            ..SessionConfig::default()
        },
    );

    let t = s.begin_txn();
    for (k, v) in [("alice", "70"), ("bob", "30"), ("carol", "0")] {
        s.put(t, k.as_bytes(), v.as_bytes())?;
    }
    let promises = s.commit_txn(t)?;
    for (shard, p) in &promises {
        println!("shard {shard} promises block {}", p.due_block());
    }
    loop {
        match s.verify(t) {
            Ok(()) => break,
            Err(ClientError::NotYetPersisted { .. }) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.into()),
        }
    }
    println!("verified {t}");
    for k in ["alice", "bob", "carol", "dave"] {
        let v = s.get_verified(k.as_bytes())?;
        println!("{k} = {:?}", v.map(|v| String::from_utf8_lossy(&v).into_owned()));
    }
    for i in 0..3 {
        println!("shard {i} digest {}", s.digest(i));
    }
    Ok(())
}
