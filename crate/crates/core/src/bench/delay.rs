//! Proof cost per key against verification delay, on a simulated clock so
//! the outcome does not depend on the machine. Clients commit write-only
//! transactions every simulated millisecond, shards persist every
//! `persist_interval_ms`, and every `delay` milliseconds each client
//! verifies all of its transactions that have waited that long in one
//! batch.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::backend::Cluster;
use super::workload::KeyGen;
use super::workload::KeyDistribution;
use super::BenchError;
use crate::ledger::TxnId;
use crate::shardserver::ShardNode;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DelaySweep {
    pub delays_ms: Vec<u64>,
    pub shards: u32,
    pub clients: u32,
    /// Simulated run length.
    pub run_ms: u64,
    /// Transactions each client commits per simulated millisecond.
    pub txns_per_ms: u32,
    pub ops_per_txn: u32,
    pub keys: u64,
    pub value_size: usize,
    pub persist_interval_ms: u64,
    pub seed: u64,
}

impl Default for DelaySweep {
    fn default() -> Self {
        DelaySweep {
            delays_ms: vec![10, 100, 1280],
            shards: 2,
            clients: 2,
            run_ms: 2560,
            txns_per_ms: 1,
            ops_per_txn: 10,
            keys: 10_000,
            value_size: 16,
            persist_interval_ms: 10,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub delay_ms: u64,
    pub txns: u64,
    pub batches: u64,
    pub keys_verified: u64,
    pub proof_bytes: u64,
    pub proof_nodes: u64,
    pub bytes_per_key: f64,
    pub nodes_per_key: f64,
}

/// Block timestamps start here so they look like wall-clock times.
const EPOCH_MS: u64 = 1_600_000_000_000;

pub fn delay_point(cfg: &DelaySweep, delay_ms: u64) -> Result<DelayPoint, BenchError> {
    if delay_ms == 0 || cfg.persist_interval_ms == 0 {
        return Err(BenchError::Config("simulated delays and persist interval must be positive".into()));
    }
    let nodes: Vec<Arc<ShardNode>> = (0..cfg.shards)
        .map(|i| Arc::new(ShardNode::in_memory(i, cfg.shards)))
        .collect();
    let cluster = Cluster::Local(nodes.clone());
    let keys = KeyGen::new(KeyDistribution::Uniform, cfg.keys)?;
    let mut clients: Vec<_> = (0..cfg.clients)
        .map(|c| {
            let seed = cfg.seed.wrapping_mul(31).wrapping_add(c as u64);
            (cluster.session(seed, delay_ms), StdRng::seed_from_u64(seed), Vec::<(u64, TxnId)>::new())
        })
        .collect();
    let value = vec![b'v'; cfg.value_size];
    let mut point = DelayPoint {
        delay_ms,
        txns: 0,
        batches: 0,
        keys_verified: 0,
        proof_bytes: 0,
        proof_nodes: 0,
        bytes_per_key: 0.0,
        nodes_per_key: 0.0,
    };
    let tick = |now: u64| -> Result<(), BenchError> {
        for n in &nodes {
            n.tick(EPOCH_MS + now).map_err(|e| BenchError::Data(e.to_string()))?;
        }
        Ok(())
    };
    for now in 0..=cfg.run_ms {
        for (s, rng, pending) in clients.iter_mut() {
            for _ in 0..cfg.txns_per_ms {
                let tid = s.begin_txn();
                for _ in 0..cfg.ops_per_txn {
                    s.put(tid, &keys.key(rng), &value)?;
                }
                s.commit_txn(tid)?;
                pending.push((now, tid));
                point.txns += 1;
            }
        }
        if now % cfg.persist_interval_ms == 0 {
            tick(now)?;
        }
        if now > 0 && now % delay_ms == 0 {
            for (s, _, pending) in clients.iter_mut() {
                let n = pending.iter().take_while(|(t, _)| t + delay_ms <= now).count();
                if n > 0 {
                    let due: Vec<TxnId> = pending.drain(..n).map(|(_, t)| t).collect();
                    s.verify_batch(&due)?;
                    point.batches += 1;
                }
            }
        }
    }
    for (s, _, pending) in clients.iter_mut() {
        let st = s.take_stats();
        point.keys_verified += st.keys_verified;
        point.proof_bytes += st.proof_bytes;
        point.proof_nodes += st.proof_nodes;
        pending.clear();
    }
    point.bytes_per_key = point.proof_bytes as f64 / point.keys_verified.max(1) as f64;
    point.nodes_per_key = point.proof_nodes as f64 / point.keys_verified.max(1) as f64;
    Ok(point)
}

/// One point per configured delay. Transactions not yet due when the run
/// ends are left unverified and do not count.
pub fn delay_sweep(cfg: &DelaySweep) -> Result<Vec<DelayPoint>, BenchError> {
    cfg.delays_ms.iter().map(|d| delay_point(cfg, *d)).collect()
}
