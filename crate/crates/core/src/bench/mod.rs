//! Benchmarks: YCSB-style verified workloads, desk-scale TPC-C with a
//! verified warehouse balance query, and two experiments on proof cost
//! (against verification delay and against ledger size).

mod backend;
pub mod delay;
mod metrics;
pub mod scaling;
pub mod tpcc;
mod workload;
mod ycsb;

use std::io;

use thiserror::Error;

use crate::client::ClientError;

pub use backend::{Backend, Cluster};
pub use metrics::{Metrics, Percentiles, Report, RunInfo, REPORT_SCHEMA};
pub use workload::{record_key, Deck, KeyDistribution, KeyGen, OpKind, WorkloadKind, WorkloadSpec};
pub use ycsb::{run_ycsb, ycsb_client};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("inconsistent data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Runs `spec` against `cluster` and returns its report.
pub fn run(spec: &WorkloadSpec, cluster: &Cluster) -> Result<Report, BenchError> {
    let metrics = if spec.workload == WorkloadKind::Tpcc {
        tpcc::run_tpcc(spec, cluster)?
    } else {
        run_ycsb(spec, cluster)?
    };
    Ok(metrics.report(RunInfo {
        workload: spec.workload.name().to_string(),
        clients: spec.clients,
        shards: cluster.shards(),
        delay_ms: spec.delay_ms,
        duration_s: spec.duration_s,
        ops_per_txn: spec.ops_per_txn,
    }))
}
