//! Line-oriented client shell. Reads commands from stdin, one per line:
//!
//! ```text
//! begin
//! put <key> <value>
//! get <key> [block]
//! commit
//! verify [all]
//! digest [shard]
//! history <key> [limit]
//! audit
//! ```

use std::io::BufRead;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::Parser;
use glassdb::auditor::{AuditorLink, RemoteAuditor};
use glassdb::client::{Session, SessionConfig, TcpTransport, Transport};
use glassdb::ledger::{At, TxnId};
use log::LevelFilter;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Interactive glassdb client")]
struct Args {
    /// Comma-separated shard endpoints, in shard order.
    #[arg(long)]
    endpoints: String,
    /// Must equal the number of endpoints; given for cross-checking.
    #[arg(long)]
    shards: Option<u32>,
    #[arg(long, default_value_t = 100)]
    delay_ms: u64,
    /// Comma-separated auditor endpoints, one per shard.
    #[arg(long)]
    auditors: Option<String>,
    /// Hex seed file for the client key; created when missing.
    #[arg(long, default_value = "glass-client.key")]
    key_file: PathBuf,
    #[arg(long, default_value_t = 200)]
    timeout_ms: u64,
    #[arg(long, default_value = "warn")]
    log_level: LevelFilter,
}

struct Shell {
    session: Session,
    open: Option<TxnId>,
    last: Option<TxnId>,
}

fn text(v: &Option<Vec<u8>>) -> serde_json::Value {
    match v {
        Some(b) => json!(String::from_utf8_lossy(b)),
        None => serde_json::Value::Null,
    }
}

impl Shell {
    fn txn(&mut self) -> anyhow::Result<TxnId> {
        self.open.ok_or_else(|| anyhow!("no open transaction; run begin"))
    }

    fn run(&mut self, words: &[&str]) -> anyhow::Result<serde_json::Value> {
        let s = &mut self.session;
        Ok(match words {
            ["begin"] => {
                if let Some(t) = self.open.take() {
                    s.discard(t);
                }
                let t = s.begin_txn();
                self.open = Some(t);
                json!({ "tid": t.to_string() })
            }
            ["put", key, value] => {
                let t = self.txn()?;
                self.session.put(t, key.as_bytes(), value.as_bytes())?;
                json!({ "ok": true })
            }
            ["get", key] => match self.open {
                Some(t) => json!({ "value": text(&self.session.get(t, key.as_bytes(), At::Latest)?) }),
                None => json!({ "value": text(&s.get_verified(key.as_bytes())?), "verified": true }),
            },
            ["get", key, block] => {
                let block: u64 = block.parse().context("block must be a number")?;
                let shard = s.shard_map().shard_of(key.as_bytes());
                let head = s.refresh_digest(shard)?;
                if block > head.block_no {
                    bail!("block {block} is past the shard's head {}", head.block_no);
                }
                let hist = s.get_history_verified(key.as_bytes(), usize::MAX)?;
                let v = hist.into_iter().find(|(_, b)| *b <= block).map(|(v, _)| v);
                json!({ "value": text(&v), "verified": true })
            }
            ["history", key, rest @ ..] => {
                let limit = match rest {
                    [n] => n.parse().context("limit must be a number")?,
                    _ => 10,
                };
                let versions: Vec<_> = s
                    .get_history_verified(key.as_bytes(), limit)?
                    .into_iter()
                    .map(|(v, b)| json!({ "block": b, "value": String::from_utf8_lossy(&v) }))
                    .collect();
                json!({ "versions": versions })
            }
            ["commit"] => {
                let t = self.txn()?;
                self.open = None;
                let promises = self.session.commit_txn(t)?;
                self.last = Some(t);
                let p: serde_json::Map<_, _> = promises
                    .iter()
                    .map(|(shard, p)| (shard.to_string(), json!(p.due_block())))
                    .collect();
                json!({ "tid": t.to_string(), "promised_blocks": p })
            }
            ["verify"] => {
                let t = self.last.ok_or_else(|| anyhow!("nothing committed yet"))?;
                self.session.verify(t)?;
                json!({ "tid": t.to_string(), "verified": true })
            }
            ["verify", "all"] => {
                let tids = s.unverified();
                s.verify_batch(&tids)?;
                s.prune_verified();
                json!({ "verified": tids.len() })
            }
            ["digest", rest @ ..] => {
                let shards: Vec<u32> = match rest {
                    [k] => vec![k.parse().context("shard must be a number")?],
                    _ => (0..s.shard_map().shards()).collect(),
                };
                let mut out = serde_json::Map::new();
                for k in shards {
                    out.insert(k.to_string(), json!(s.refresh_digest(k)?.to_string()));
                }
                json!({ "digests": out })
            }
            ["audit"] => {
                let verdicts: Vec<_> = s
                    .audit_submit()
                    .into_iter()
                    .map(|(shard, v)| json!({ "shard": shard, "verdict": v }))
                    .collect();
                json!({ "audit": verdicts })
            }
            _ => bail!("unknown command; try begin, put, get, commit, verify, digest, history, audit"),
        })
    }
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    glass_tools::init_json_log(args.log_level);
    let endpoints = glass_tools::endpoints(&args.endpoints);
    if let Some(n) = args.shards {
        anyhow::ensure!(n as usize == endpoints.len(), "--shards {n} but {} endpoints", endpoints.len());
    }
    anyhow::ensure!(!endpoints.is_empty(), "no endpoints");
    let key = glass_tools::load_or_create_key(&args.key_file)?;
    let timeout = Duration::from_millis(args.timeout_ms);
    let transports: Vec<Box<dyn Transport>> = endpoints
        .iter()
        .map(|e| Box::new(TcpTransport::new(e.clone(), timeout)) as Box<dyn Transport>)
        .collect();
    let mut session = Session::new(
        key,
        transports,
        SessionConfig {
            delay_ms: args.delay_ms,
            ..SessionConfig::default()
        },
    );
    if let Some(list) = &args.auditors {
        for (shard, addr) in glass_tools::endpoints(list).into_iter().enumerate() {
            let link: Arc<dyn AuditorLink> = Arc::new(RemoteAuditor::new(addr, Duration::from_secs(5)));
            session.add_auditor(shard as u32, link);
        }
    }
    let mut shell = Shell {
        session,
        open: None,
        last: None,
    };
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() || words[0].starts_with('#') {
            continue;
        }
        if words == ["quit"] || words == ["exit"] {
            break;
        }
        let out = match shell.run(&words) {
            Ok(v) => v,
            Err(e) => json!({ "error": e.to_string() }),
        };
        println!("{out}");
    }
    Ok(())
}
