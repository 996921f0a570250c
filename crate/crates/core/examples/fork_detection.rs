//! A shard that shows two histories to two auditors is caught as soon as
//! the auditors gossip.

use std::sync::Arc;

use glassdb::auditor::{Auditor, AuditorConfig};
use glassdb::client::{InProcess, Session, SessionConfig};
use glassdb::shardserver::{EquivocatingShard, Service};
use glassdb::txnmgr::{now_ms, ClientKey};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shard = Arc::new(EquivocatingShard::new(0, 1));
    let conn = |c| Box::new(InProcess::with_conn(shard.clone() as Arc<dyn Service>, c));
    let mut alice = Session::new(ClientKey::from_seed([1; 32]), vec![conn(0)], SessionConfig::default());
    let mut bob = Session::new(ClientKey::from_seed([2; 32]), vec![conn(1)], SessionConfig::default());
    let auditor = |c, name: &str| {
        Arc::new(Auditor::new(
            AuditorConfig {
                name: name.into(),
                ..AuditorConfig::default()
            },
            conn(c),
        ))
    };
    let (a0, a1) = (auditor(2, "a0"), auditor(3, "a1"));

    let t = alice.begin_txn();
    alice.put(t, b"owner", b"alice")?;
    alice.commit_txn(t)?;
    shard.tick(now_ms())?;

    shard.fork();
    for (s, who) in [(&mut alice, "alice"), (&mut bob, "bob")] {
        let t = s.begin_txn();
        s.put(t, b"owner", who.as_bytes())?;
        s.commit_txn(t)?;
    }
    shard.tick(now_ms())?;
    println!("a0 alone: {:?}", a0.catch_up()?);
    println!("a1 alone: {:?}", a1.catch_up()?);

    a0.add_peer("a1", a1.clone());
    a0.gossip();
    for ev in a0.evidence() {
        println!("{}", serde_json::to_string_pretty(&ev)?);
    }
    Ok(())
}
