//! Audits one shard: replays its blocks, gossips digests with peer
//! auditors and prints fork evidence as JSON lines on stdout.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::Parser;
use glassdb::auditor::{AuditState, Auditor, AuditorConfig, AuditorLink, AuditorServer, RemoteAuditor, Verdict};
use glassdb::client::TcpTransport;
use log::LevelFilter;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Audit one glassdb shard")]
struct Args {
    /// Endpoint of the shard to audit.
    #[arg(long)]
    shard: String,
    #[arg(long, default_value_t = 0)]
    shard_id: u32,
    /// Comma-separated endpoints of peer auditors of the same shard.
    #[arg(long, default_value = "")]
    peers: String,
    #[arg(long, default_value_t = 10.0)]
    interval_s: f64,
    /// Where peers and clients reach this auditor.
    #[arg(long)]
    listen: Option<String>,
    /// Checkpoint file, restored at start and rewritten every interval.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "auditor")]
    name: String,
    /// Reject writes from clients that never registered a key.
    #[arg(long)]
    require_registration: bool,
    /// Stop after this many rounds (0 runs forever).
    #[arg(long, default_value_t = 0)]
    rounds: u64,
    #[arg(long, default_value = "info")]
    log_level: LevelFilter,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    glass_tools::init_json_log(args.log_level);
    let cfg = AuditorConfig {
        shard_id: args.shard_id,
        name: args.name.clone(),
        require_registration: args.require_registration,
        ..AuditorConfig::default()
    };
    let link = || Box::new(TcpTransport::new(args.shard.clone(), Duration::from_secs(5)));
    let auditor = match args.checkpoint.as_ref().filter(|p| p.exists()) {
        Some(p) => {
            let state = AuditState::load(p).with_context(|| format!("loading {}", p.display()))?;
            let (a, v) = Auditor::restore(cfg, link(), &state)?;
            log::info!("restored checkpoint at {}: {v:?}", state.digest);
            a
        }
        None => Auditor::new(cfg, link()),
    };
    let auditor = Arc::new(auditor);
    for peer in glass_tools::endpoints(&args.peers) {
        let link: Arc<dyn AuditorLink> = Arc::new(RemoteAuditor::new(peer.clone(), Duration::from_secs(5)));
        auditor.add_peer(peer, link);
    }
    let _server = match &args.listen {
        Some(addr) => {
            let s = AuditorServer::start(auditor.clone(), addr.as_str()).with_context(|| format!("listening on {addr}"))?;
            log::info!("serving peers on {}", s.local_addr());
            Some(s)
        }
        None => None,
    };

    let interval = Duration::from_secs_f64(args.interval_s.max(0.0));
    let mut printed = HashSet::new();
    let mut round = 0;
    loop {
        let started = Instant::now();
        match auditor.catch_up() {
            Ok(Verdict::Accepted) => log::info!("shard {} verified up to {}", args.shard_id, auditor.digest()),
            Ok(Verdict::Rejected { block_no, reason }) => {
                println!("{}", json!({ "kind": "rejected", "shard": args.shard_id, "block_no": block_no, "reason": reason }));
            }
            Ok(v) => log::info!("{v:?}"),
            Err(e) => log::warn!("audit round failed: {e}"),
        }
        for (peer, r) in auditor.gossip() {
            if let Err(e) = r {
                log::warn!("gossip with {peer} failed: {e}");
            }
        }
        for ev in auditor.evidence() {
            let line = json!({ "kind": "fork", "evidence": ev }).to_string();
            if printed.insert(line.clone()) {
                println!("{line}");
            }
        }
        if let Some(p) = &args.checkpoint {
            if let Err(e) = auditor.state().save(p) {
                log::warn!("checkpoint not written: {e}");
            }
        }
        round += 1;
        if args.rounds > 0 && round >= args.rounds {
            return Ok(());
        }
        std::thread::sleep(interval.saturating_sub(started.elapsed()));
    }
}
