use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rand_distr::{Distribution as _, Zipf};
use serde::{Deserialize, Serialize};

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    /// 50% verified puts, 50% verified latest reads.
    X,
    /// 20% puts, 40% latest reads, 40% historical reads.
    Y,
    /// 8 reads and 2 writes per 10 operations.
    ReadHeavy,
    Balanced,
    /// 2 reads and 8 writes per 10 operations.
    WriteHeavy,
    Tpcc,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 6] = [
        WorkloadKind::X,
        WorkloadKind::Y,
        WorkloadKind::ReadHeavy,
        WorkloadKind::Balanced,
        WorkloadKind::WriteHeavy,
        WorkloadKind::Tpcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::X => "x",
            WorkloadKind::Y => "y",
            WorkloadKind::ReadHeavy => "read-heavy",
            WorkloadKind::Balanced => "balanced",
            WorkloadKind::WriteHeavy => "write-heavy",
            WorkloadKind::Tpcc => "tpcc",
        }
    }

    /// Operation mix in percent; empty for TPC-C, which has its own.
    pub fn mix(self) -> Vec<(OpKind, u32)> {
        use OpKind::*;
        match self {
            WorkloadKind::X | WorkloadKind::Balanced => vec![(VerifiedPut, 50), (VerifiedGetLatest, 50)],
            WorkloadKind::Y => vec![(VerifiedPut, 20), (VerifiedGetLatest, 40), (VerifiedGetHistory, 40)],
            WorkloadKind::ReadHeavy => vec![(VerifiedPut, 20), (VerifiedGetLatest, 80)],
            WorkloadKind::WriteHeavy => vec![(VerifiedPut, 80), (VerifiedGetLatest, 20)],
            WorkloadKind::Tpcc => Vec::new(),
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown workload {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    VerifiedPut,
    VerifiedGetLatest,
    VerifiedGetHistory,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::VerifiedPut => "verified_put",
            OpKind::VerifiedGetLatest => "verified_get_latest",
            OpKind::VerifiedGetHistory => "verified_get_history",
        }
    }
}

/// Draws items in exact proportion to integer weights: every full pass
/// over the deck yields each item exactly its weight times, in shuffled
/// order.
#[derive(Debug, Clone)]
pub struct Deck<T> {
    slots: Vec<T>,
    next: usize,
}

impl<T: Copy> Deck<T> {
    pub fn new(weights: &[(T, u32)]) -> Deck<T> {
        let slots: Vec<T> = weights
            .iter()
            .flat_map(|(t, w)| std::iter::repeat_n(*t, *w as usize))
            .collect();
        assert!(!slots.is_empty(), "a deck needs a positive weight");
        Deck { slots, next: 0 }
    }

    pub fn draw(&mut self, rng: &mut impl Rng) -> T {
        if self.next == 0 {
            self.slots.shuffle(rng);
        }
        let t = self.slots[self.next];
        self.next = (self.next + 1) % self.slots.len();
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyDistribution {
    Uniform,
    Zipf { theta: f64 },
}

/// Picks record indices in `0..keys`.
#[derive(Debug, Clone)]
pub enum KeyGen {
    Uniform(u64),
    Zipf(Zipf<f64>),
}

impl KeyGen {
    pub fn new(dist: KeyDistribution, keys: u64) -> Result<KeyGen, BenchError> {
        if keys == 0 {
            return Err(BenchError::Config("key count must be positive".into()));
        }
        Ok(match dist {
            KeyDistribution::Uniform => KeyGen::Uniform(keys),
            KeyDistribution::Zipf { theta } => KeyGen::Zipf(
                Zipf::new(keys as f64, theta).map_err(|e| BenchError::Config(format!("zipf: {e}")))?,
            ),
        })
    }

    pub fn index(&self, rng: &mut impl Rng) -> u64 {
        match self {
            KeyGen::Uniform(n) => rng.random_range(0..*n),
            KeyGen::Zipf(z) => z.sample(rng) as u64 - 1,
        }
    }

    pub fn key(&self, rng: &mut impl Rng) -> Vec<u8> {
        record_key(self.index(rng))
    }
}

pub fn record_key(i: u64) -> Vec<u8> {
    format!("user{i:010}").into_bytes()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub workload: WorkloadKind,
    pub delay_ms: u64,
    pub keys: u64,
    pub value_size: usize,
    pub distribution: KeyDistribution,
    pub clients: u32,
    pub duration_s: f64,
    /// Operations batched into one transaction.
    pub ops_per_txn: u32,
    /// TPC-C scale.
    pub warehouses: u32,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            workload: WorkloadKind::X,
            delay_ms: 100,
            keys: 10_000,
            value_size: 100,
            distribution: KeyDistribution::Uniform,
            clients: 4,
            duration_s: 10.0,
            ops_per_txn: 10,
            warehouses: 1,
            seed: 7,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let mix = self.workload.mix();
        if !mix.is_empty() && mix.iter().map(|(_, w)| w).sum::<u32>() != 100 {
            return Err(BenchError::Config("operation mix must sum to 100".into()));
        }
        if self.clients == 0 || self.ops_per_txn == 0 {
            return Err(BenchError::Config("clients and ops per transaction must be positive".into()));
        }
        if !(self.duration_s >= 0.0) {
            return Err(BenchError::Config("duration must be non-negative".into()));
        }
        if self.workload == WorkloadKind::Tpcc && !(1..=4).contains(&self.warehouses) {
            return Err(BenchError::Config("TPC-C runs with 1 to 4 warehouses".into()));
        }
        Ok(())
    }
}
