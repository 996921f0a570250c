//! Desk-scale TPC-C: load one warehouse, take a few payments, and read the
//! warehouse's year-to-date balance history with proofs.

use glassdb::bench::tpcc::{self, TpccScale};
use glassdb::bench::{run, Cluster, WorkloadKind, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cluster = Cluster::local(2);
    let scale = TpccScale::desk(1);
    let mut s = cluster.session(1, 0);
    tpcc::load(&mut s, &scale, 1, 200)?;
    for c in 1..=12 {
        tpcc::payment(&mut s, 1, 1 + c % 10, c, 1_000 * c as i64)?;
    }
    println!("w_ytd history, newest first: {:?}", tpcc::warehouse_balance(&mut s, 1)?);

    let spec = WorkloadSpec {
        workload: WorkloadKind::Tpcc,
        duration_s: 2.0,
        clients: 2,
        ..WorkloadSpec::default()
    };
    let r = run(&spec, &Cluster::local(2))?;
    println!("{} txns committed, {} aborted, mix {:?}", r.committed, r.aborted, r.ops);
    Ok(())
}
