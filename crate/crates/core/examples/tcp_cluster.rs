//! Two shards served over TCP, a remote auditor, and a client that
//! commits, verifies and submits its digests for audit.

use std::sync::Arc;
use std::time::Duration;

use glassdb::auditor::{Auditor, AuditorConfig, AuditorServer, RemoteAuditor};
use glassdb::client::{Session, SessionConfig, TcpTransport, Transport};
use glassdb::shardserver::{ShardNode, ShardServer};
use glassdb::txnmgr::ClientKey;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let timeout = Duration::from_millis(500);
    let mut servers = Vec::new();
    for i in 0..2 {
        let node = Arc::new(ShardNode::in_memory(i, 2));
        node.start_persister();
        servers.push(ShardServer::start(node, "127.0.0.1:0", 4)?);
    }
    let addrs: Vec<String> = servers.iter().map(|s| s.local_addr().to_string()).collect();
    println!("shards on {addrs:?}");

    let transports = addrs
        .iter()
        .map(|a| Box::new(TcpTransport::new(a.clone(), timeout)) as Box<dyn Transport>)
        .collect();
    let mut s = Session::new(
        ClientKey::from_seed([3; 32]),
        transports,
        SessionConfig {
            delay_ms: 0,
            ..SessionConfig::default()
        },
    );
    for i in 0..2u32 {
        let audit = Arc::new(Auditor::new(
            AuditorConfig {
                shard_id: i,
                ..AuditorConfig::default()
            },
            Box::new(TcpTransport::new(addrs[i as usize].clone(), timeout)),
        ));
        let server = AuditorServer::start(audit, "127.0.0.1:0")?;
        s.add_auditor(i, Arc::new(RemoteAuditor::new(server.local_addr().to_string(), timeout)));
        std::mem::forget(server);
    }

    for round in 0..5 {
        let t = s.begin_txn();
        for k in ["apple", "pear", "plum", "fig"] {
            s.put(t, k.as_bytes(), format!("{round}").as_bytes())?;
        }
        s.commit_txn(t)?;
    }
    println!("pear = {:?}", s.get_verified(b"pear")?.map(|v| String::from_utf8_lossy(&v).into_owned()));
    for (shard, verdict) in s.audit_submit() {
        println!("shard {shard}: {verdict:?}");
    }
    for srv in servers {
        srv.shutdown();
    }
    Ok(())
}
