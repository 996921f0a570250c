//! Runs a verified benchmark and writes a JSON report.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use glassdb::bench::{run, Cluster, KeyDistribution, WorkloadKind, WorkloadSpec};
use log::LevelFilter;

#[derive(Parser)]
#[command(about = "YCSB-style and TPC-C benchmarks with verified operations")]
struct Args {
    /// x, y, read-heavy, balanced, write-heavy or tpcc.
    #[arg(long, default_value = "x")]
    workload: String,
    #[arg(long, default_value_t = 4)]
    clients: u32,
    #[arg(long, default_value_t = 100)]
    delay_ms: u64,
    /// Seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Comma-separated shard endpoints; without them shards run in process.
    #[arg(long)]
    endpoints: Option<String>,
    /// Shards to run in process when no endpoints are given.
    #[arg(long, default_value_t = 2)]
    local_shards: u32,
    #[arg(long, default_value_t = 10_000)]
    keys: u64,
    #[arg(long, default_value_t = 100)]
    value_size: usize,
    /// Zipf skew; uniform keys when absent.
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long, default_value_t = 10)]
    ops_per_txn: u32,
    #[arg(long, default_value_t = 1)]
    warehouses: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "warn")]
    log_level: LevelFilter,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    glass_tools::init_json_log(args.log_level);
    let spec = WorkloadSpec {
        workload: args.workload.parse::<WorkloadKind>()?,
        delay_ms: args.delay_ms,
        keys: args.keys,
        value_size: args.value_size,
        distribution: match args.zipf {
            Some(theta) => KeyDistribution::Zipf { theta },
            None => KeyDistribution::Uniform,
        },
        clients: args.clients,
        duration_s: args.duration,
        ops_per_txn: args.ops_per_txn,
        warehouses: args.warehouses,
        seed: args.seed,
    };
    spec.validate()?;
    let cluster = match &args.endpoints {
        Some(list) => Cluster::remote(glass_tools::endpoints(list)),
        None => Cluster::local(args.local_shards),
    };
    let report = run(&spec, &cluster)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.report {
        Some(p) => std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    eprintln!(
        "{}: {} committed, {:.0} txn/s, {} verified, {} integrity incidents",
        report.run.workload, report.committed, report.throughput_tps, report.verified, report.integrity_incidents
    );
    Ok(())
}
