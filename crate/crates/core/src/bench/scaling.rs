//! Inclusion-proof size against ledger size: mean node count for random
//! (block, key) pairs, fitted to `c1·log2 B + c2·log2 m + c3`.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::ledger::{BatchWrite, Ledger, LedgerConfig, TxnId, WriteBatch};
use crate::proofs::prove_inclusion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Keys in the final state.
    pub keys: u64,
    pub blocks: u64,
    /// Independently keyed ledgers measured.
    pub trials: usize,
    /// Proofs sampled per ledger.
    pub samples: usize,
    pub mean_nodes: f64,
    /// Mean block-tree and state-tree path lengths for a key in the last
    /// block.
    pub upper_height: f64,
    pub lower_height: f64,
}

struct Trial {
    mean_nodes: f64,
    upper_height: usize,
    lower_height: usize,
}

/// One ledger: `keys` keys, named with a per-trial salt, each written
/// once in a random block of `blocks` (equal shares); then `samples`
/// single-key inclusion proofs for random keys at random blocks where
/// they already exist.
fn trial(keys: u64, blocks: u64, samples: usize, seed: u64) -> Result<Trial, BenchError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let salt: u32 = rng.random();
    let name = |i: u64| format!("{salt:08x}-{i:08}").into_bytes();
    let mut order: Vec<u64> = (0..keys).collect();
    order.shuffle(&mut rng);
    let ledger = Ledger::in_memory(LedgerConfig::default());
    let tid = TxnId {
        client_id: 1,
        client_ts: 0,
        counter: 0,
    };
    let share = |b: u64| (b * keys / blocks) as usize;
    for b in 0..blocks {
        let writes = order[share(b)..share(b + 1)]
            .iter()
            .map(|&i| BatchWrite {
                key: name(i),
                value: i.to_be_bytes().to_vec(),
                tid,
            })
            .collect();
        ledger
            .append_block(WriteBatch::new(writes), b + 1)
            .map_err(|e| BenchError::Data(e.to_string()))?;
    }
    let digest = ledger.digest();
    let prove = |block: u64, i: u64| {
        prove_inclusion(&ledger, &digest, block, &[name(i)]).map_err(|e| BenchError::Data(e.to_string()))
    };
    let mut total = 0usize;
    for _ in 0..samples {
        let block = rng.random_range(1..=blocks);
        let i = order[rng.random_range(0..share(block))];
        total += prove(block, i)?.node_count();
    }
    let last = prove(blocks, order[keys as usize - 1])?;
    Ok(Trial {
        mean_nodes: total as f64 / samples.max(1) as f64,
        upper_height: last.upper.len(),
        lower_height: last.lower.len(),
    })
}

/// Mean inclusion-proof node count over `trials` independently keyed
/// ledgers of `keys` keys and `blocks` blocks.
pub fn scaling_point(keys: u64, blocks: u64, samples: usize, trials: usize, seed: u64) -> Result<ScalingPoint, BenchError> {
    if blocks == 0 || keys < blocks || trials == 0 {
        return Err(BenchError::Config("need a trial and at least one key per block".into()));
    }
    let mut out = ScalingPoint {
        keys,
        blocks,
        trials,
        samples,
        mean_nodes: 0.0,
        upper_height: 0.0,
        lower_height: 0.0,
    };
    for t in 0..trials {
        let r = trial(keys, blocks, samples, seed.wrapping_mul(0x9e37_79b9).wrapping_add(t as u64))?;
        out.mean_nodes += r.mean_nodes;
        out.upper_height += r.upper_height as f64;
        out.lower_height += r.lower_height as f64;
    }
    let n = trials as f64;
    out.mean_nodes /= n;
    out.upper_height /= n;
    out.lower_height /= n;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub c_blocks: f64,
    pub c_keys: f64,
    pub c_const: f64,
    pub r_squared: f64,
}

/// Least-squares fit of mean node count to log2 B and log2 m.
pub fn fit(points: &[ScalingPoint]) -> Result<ScalingFit, BenchError> {
    if points.len() < 3 {
        return Err(BenchError::Config("a three-term fit needs three points".into()));
    }
    let a = DMatrix::from_fn(points.len(), 3, |r, c| match c {
        0 => (points[r].blocks as f64).log2(),
        1 => (points[r].keys as f64).log2(),
        _ => 1.0,
    });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.mean_nodes));
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| BenchError::Data(e.to_string()))?;
    let predicted = &a * &coef;
    let mean = y.mean();
    let ss_res: f64 = (&y - &predicted).iter().map(|e| e * e).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(ScalingFit {
        c_blocks: coef[0],
        c_keys: coef[1],
        c_const: coef[2],
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}
