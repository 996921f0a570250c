use std::collections::BTreeMap;
use std::time::Duration;

use hdrhistogram::Histogram;
use serde::{Deserialize, Serialize};

use crate::client::SessionStats;

/// Version of the JSON report layout; bumped on any incompatible change.
pub const REPORT_SCHEMA: &str = "glassdb-bench/1";

fn histogram() -> Histogram<u64> {
    Histogram::new(3).expect("valid precision")
}

fn record(h: &mut Histogram<u64>, d: Duration) {
    h.saturating_record(d.as_micros().min(u64::MAX as u128) as u64);
}

/// Counters and latency histograms of one run. Per-client instances are
/// combined with [`merge`](Metrics::merge) only.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub elapsed: Duration,
    pub committed: u64,
    pub aborted: u64,
    /// Commits whose outcome the client could not learn.
    pub unknown: u64,
    /// Operations that failed for other reasons, e.g. unreachable shards.
    pub failed: u64,
    /// Transactions whose promises verified.
    pub verified: u64,
    /// Committed transactions still unverified when the run ended.
    pub unverified: u64,
    /// Proof checks that failed.
    pub integrity_incidents: u64,
    /// Operations or transactions issued, by type.
    pub ops: BTreeMap<String, u64>,
    pub txn: Histogram<u64>,
    pub prepare: Histogram<u64>,
    pub commit: Histogram<u64>,
    pub persist: Histogram<u64>,
    pub proof: Histogram<u64>,
    pub proof_bytes: u64,
    pub proof_nodes: u64,
    pub keys_verified: u64,
    /// Blocks across all shards at the end of the run.
    pub blocks: u64,
    /// Keys stored across all shards at the end of the run.
    pub keys: u64,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            elapsed: Duration::ZERO,
            committed: 0,
            aborted: 0,
            unknown: 0,
            failed: 0,
            verified: 0,
            unverified: 0,
            integrity_incidents: 0,
            ops: BTreeMap::new(),
            txn: histogram(),
            prepare: histogram(),
            commit: histogram(),
            persist: histogram(),
            proof: histogram(),
            proof_bytes: 0,
            proof_nodes: 0,
            keys_verified: 0,
            blocks: 0,
            keys: 0,
        }
    }
}

impl Metrics {
    pub fn count_op(&mut self, name: &str) {
        *self.ops.entry(name.to_string()).or_default() += 1;
    }

    pub fn record_txn(&mut self, d: Duration) {
        record(&mut self.txn, d);
    }

    pub fn absorb(&mut self, stats: SessionStats) {
        for (h, ds) in [
            (&mut self.prepare, &stats.prepare),
            (&mut self.commit, &stats.commit),
            (&mut self.persist, &stats.persist),
            (&mut self.proof, &stats.proof),
        ] {
            for d in ds {
                record(h, *d);
            }
        }
        self.proof_bytes += stats.proof_bytes;
        self.proof_nodes += stats.proof_nodes;
        self.keys_verified += stats.keys_verified;
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.elapsed = self.elapsed.max(other.elapsed);
        self.committed += other.committed;
        self.aborted += other.aborted;
        self.unknown += other.unknown;
        self.failed += other.failed;
        self.verified += other.verified;
        self.unverified += other.unverified;
        self.integrity_incidents += other.integrity_incidents;
        for (k, v) in &other.ops {
            *self.ops.entry(k.clone()).or_default() += v;
        }
        for (h, o) in [
            (&mut self.txn, &other.txn),
            (&mut self.prepare, &other.prepare),
            (&mut self.commit, &other.commit),
            (&mut self.persist, &other.persist),
            (&mut self.proof, &other.proof),
        ] {
            h.add(o).expect("auto-resizing histogram");
        }
        self.proof_bytes += other.proof_bytes;
        self.proof_nodes += other.proof_nodes;
        self.keys_verified += other.keys_verified;
        self.blocks = self.blocks.max(other.blocks);
        self.keys = self.keys.max(other.keys);
    }

    pub fn throughput(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.committed as f64 / s
        } else {
            0.0
        }
    }

    pub fn abort_rate(&self) -> f64 {
        let tried = self.committed + self.aborted;
        if tried > 0 {
            self.aborted as f64 / tried as f64
        } else {
            0.0
        }
    }

    fn per_key(&self, v: u64) -> f64 {
        if self.keys_verified > 0 {
            v as f64 / self.keys_verified as f64
        } else {
            0.0
        }
    }

    pub fn proof_bytes_per_key(&self) -> f64 {
        self.per_key(self.proof_bytes)
    }

    pub fn proof_nodes_per_key(&self) -> f64 {
        self.per_key(self.proof_nodes)
    }

    pub fn report(&self, run: RunInfo) -> Report {
        let latency_us = [
            ("txn", &self.txn),
            ("prepare", &self.prepare),
            ("commit", &self.commit),
            ("persist", &self.persist),
            ("get_proof", &self.proof),
        ]
        .into_iter()
        .map(|(k, h)| (k.to_string(), Percentiles::of(h)))
        .collect();
        Report {
            schema: REPORT_SCHEMA.to_string(),
            run,
            elapsed_s: self.elapsed.as_secs_f64(),
            committed: self.committed,
            aborted: self.aborted,
            unknown: self.unknown,
            failed: self.failed,
            verified: self.verified,
            unverified: self.unverified,
            integrity_incidents: self.integrity_incidents,
            throughput_tps: self.throughput(),
            abort_rate: self.abort_rate(),
            ops: self.ops.clone(),
            latency_us,
            proof_bytes_per_key: self.proof_bytes_per_key(),
            proof_nodes_per_key: self.proof_nodes_per_key(),
            keys_verified: self.keys_verified,
            txns: self.committed,
            blocks: self.blocks,
            keys: self.keys,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl Percentiles {
    fn of(h: &Histogram<u64>) -> Percentiles {
        Percentiles {
            count: h.len(),
            mean: if h.is_empty() { 0.0 } else { h.mean() },
            p50: h.value_at_quantile(0.5),
            p90: h.value_at_quantile(0.9),
            p99: h.value_at_quantile(0.99),
            max: h.max(),
        }
    }
}

/// The parameters a report was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub workload: String,
    pub clients: u32,
    pub shards: u32,
    pub delay_ms: u64,
    pub duration_s: f64,
    pub ops_per_txn: u32,
}

/// The JSON document `glass-bench --report` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub run: RunInfo,
    pub elapsed_s: f64,
    pub committed: u64,
    pub aborted: u64,
    pub unknown: u64,
    pub failed: u64,
    pub verified: u64,
    pub unverified: u64,
    pub integrity_incidents: u64,
    pub throughput_tps: f64,
    pub abort_rate: f64,
    pub ops: BTreeMap<String, u64>,
    /// Latency per phase in microseconds.
    pub latency_us: BTreeMap<String, Percentiles>,
    pub proof_bytes_per_key: f64,
    pub proof_nodes_per_key: f64,
    pub keys_verified: u64,
    /// N: committed transactions.
    pub txns: u64,
    /// B: blocks across shards.
    pub blocks: u64,
    /// m: keys across shards.
    pub keys: u64,
}
