//! Proof bytes per verified key at several verification delays.

use glassdb::bench::delay::{delay_sweep, DelaySweep};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DelaySweep::default();
    println!("{:>8} {:>8} {:>8} {:>10} {:>14} {:>14}", "delay", "txns", "batches", "keys", "bytes/key", "nodes/key");
    for p in delay_sweep(&cfg)? {
        println!(
            "{:>6}ms {:>8} {:>8} {:>10} {:>14.1} {:>14.3}",
            p.delay_ms, p.txns, p.batches, p.keys_verified, p.bytes_per_key, p.nodes_per_key
        );
    }
    Ok(())
}
