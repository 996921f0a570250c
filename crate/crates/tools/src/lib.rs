//! Shared plumbing for the command-line tools: JSON log lines, endpoint
//! lists and client keys.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use glassdb::txnmgr::ClientKey;
use log::{LevelFilter, Log, Metadata, Record};
use serde_json::json;

struct JsonLog {
    level: LevelFilter,
}

impl Log for JsonLog {
    fn enabled(&self, m: &Metadata<'_>) -> bool {
        m.level() <= self.level
    }

    fn log(&self, r: &Record<'_>) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let line = json!({
            "ts_ms": ts_ms,
            "level": r.level().as_str(),
            "target": r.target(),
            "msg": r.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

/// Logs one JSON object per event to stderr.
pub fn init_json_log(level: LevelFilter) {
    if log::set_boxed_logger(Box::new(JsonLog { level })).is_ok() {
        log::set_max_level(level);
    }
}

/// Splits a comma-separated endpoint list.
pub fn endpoints(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// Reads a client key stored as a hex seed, creating a fresh one if the
/// file does not exist.
pub fn load_or_create_key(path: &Path) -> anyhow::Result<ClientKey> {
    if path.exists() {
        return parse_key(fs_read(path)?.trim());
    }
    let key = ClientKey::generate(&mut rand::rng());
    std::fs::write(path, hex::encode(key.seed())).with_context(|| format!("writing {}", path.display()))?;
    Ok(key)
}

pub fn parse_key(hex_seed: &str) -> anyhow::Result<ClientKey> {
    let bytes = hex::decode(hex_seed).context("client key must be hex")?;
    let Ok(seed) = <[u8; 32]>::try_from(bytes) else {
        bail!("client key must be 32 bytes");
    };
    Ok(ClientKey::from_seed(seed))
}

fn fs_read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
