//! Runs one shard server.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use glassdb::shardserver::{ShardConfig, ShardNode, ShardServer};
use log::LevelFilter;

#[derive(Parser)]
#[command(about = "Serve one shard of a glassdb cluster")]
struct Args {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    /// Omit to keep the ledger in memory.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    persist_interval_ms: Option<u64>,
    #[arg(long)]
    shard_id: Option<u32>,
    #[arg(long)]
    shards: Option<u32>,
    #[arg(long, default_value = "info")]
    log_level: LevelFilter,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    glass_tools::init_json_log(args.log_level);
    let mut cfg: ShardConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ShardConfig::default(),
    };
    if let Some(v) = args.listen {
        cfg.listen = v;
    }
    if let Some(v) = args.data_dir {
        cfg.data_dir = Some(v);
    }
    if let Some(v) = args.persist_interval_ms {
        cfg.txn.persist_interval_ms = v;
    }
    if let Some(v) = args.shard_id {
        cfg.shard_id = v;
    }
    if let Some(v) = args.shards {
        cfg.shards = v;
    }
    anyhow::ensure!(cfg.shard_id < cfg.shards, "shard id {} out of {} shards", cfg.shard_id, cfg.shards);

    let listen = cfg.listen.clone();
    let workers = cfg.txn.worker_threads;
    let (node, report) = ShardNode::open(cfg).context("opening the ledger")?;
    log::info!(
        "recovered to {} ({:?}, {} blocks replayed)",
        node.ledger().digest(),
        report.status(),
        report.replayed_blocks
    );
    let node = Arc::new(node);
    node.start_persister();
    let server = ShardServer::start(node.clone(), listen.as_str(), workers).with_context(|| format!("listening on {listen}"))?;
    log::info!("listening on {}", server.local_addr());
    loop {
        std::thread::park();
    }
}
