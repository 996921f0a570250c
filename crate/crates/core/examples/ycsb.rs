//! A short Workload-Y run on in-process shards, printed as a report.

use glassdb::bench::{run, Cluster, WorkloadKind, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = WorkloadSpec {
        workload: WorkloadKind::Y,
        duration_s: 2.0,
        keys: 5_000,
        ..WorkloadSpec::default()
    };
    let report = run(&spec, &Cluster::local(2))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
