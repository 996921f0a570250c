use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use super::backend::{Backend, Cluster};
use super::metrics::Metrics;
use super::workload::{Deck, KeyGen, OpKind, WorkloadSpec};
use super::BenchError;
use crate::client::ClientError;
use crate::ledger::TxnId;

/// Committed transactions waiting for their verification time.
#[derive(Default)]
pub(crate) struct Pending {
    queue: VecDeque<(Instant, TxnId)>,
}

impl Pending {
    pub(crate) fn push(&mut self, due: Instant, tid: TxnId) {
        self.queue.push_back((due, tid));
    }

    /// Verifies every transaction that is due, in one batch.
    pub(crate) fn verify_due(&mut self, b: &mut impl Backend, m: &mut Metrics, now: Instant) {
        let n = self.queue.iter().take_while(|(due, _)| *due <= now).count();
        if n == 0 {
            return;
        }
        let tids: Vec<TxnId> = self.queue.iter().take(n).map(|(_, t)| *t).collect();
        match b.verify(&tids) {
            Ok(()) => {
                m.verified += n as u64;
                self.queue.drain(..n);
            }
            Err(ClientError::NotYetPersisted { .. }) => {}
            Err(ClientError::TamperDetected(ev)) => {
                log::error!("integrity incident: {ev}");
                m.integrity_incidents += 1;
                self.queue.drain(..n);
            }
            Err(e) => {
                log::warn!("verification failed: {e}");
                m.failed += n as u64;
                self.queue.drain(..n);
            }
        }
    }

    /// Keeps verifying until the queue is empty or `grace` has passed.
    pub(crate) fn drain(&mut self, b: &mut impl Backend, m: &mut Metrics, grace: Duration) {
        let deadline = Instant::now() + grace;
        while !self.queue.is_empty() && Instant::now() < deadline {
            self.verify_due(b, m, Instant::now());
            if !self.queue.is_empty() {
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        m.unverified += self.queue.len() as u64;
        self.queue.clear();
    }
}

pub(crate) fn note_commit_error(m: &mut Metrics, e: ClientError) {
    match e {
        ClientError::TxnAborted { .. } => m.aborted += 1,
        ClientError::TxnUnknown(_) => m.unknown += 1,
        ClientError::TamperDetected(ev) => {
            log::error!("integrity incident: {ev}");
            m.integrity_incidents += 1;
        }
        e => {
            log::warn!("transaction failed: {e}");
            m.failed += 1;
        }
    }
}

fn value(rng: &mut StdRng, size: usize) -> Vec<u8> {
    (0..size).map(|_| rng.random_range(b'a'..=b'z')).collect()
}

/// One client's share of a YCSB-style run.
pub fn ycsb_client(spec: &WorkloadSpec, b: &mut impl Backend, seed: u64, deadline: Instant) -> Result<Metrics, BenchError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut deck = Deck::new(&spec.workload.mix());
    let keys = KeyGen::new(spec.distribution, spec.keys)?;
    let delay = Duration::from_millis(spec.delay_ms);
    let mut m = Metrics::default();
    let mut pending = Pending::default();
    let started = Instant::now();
    while Instant::now() < deadline {
        let t0 = Instant::now();
        let tid = b.begin();
        let mut ok = true;
        for _ in 0..spec.ops_per_txn {
            let op = deck.draw(&mut rng);
            m.count_op(op.name());
            let key = keys.key(&mut rng);
            let r = match op {
                OpKind::VerifiedPut => b.put(tid, &key, &value(&mut rng, spec.value_size)),
                OpKind::VerifiedGetLatest => b.get(tid, &key).map(|_| ()),
                OpKind::VerifiedGetHistory => {
                    let at = b.digest_for(&key);
                    b.get_at_verified(&key, at).map(|_| ())
                }
            };
            if let Err(e) = r {
                ok = false;
                b.discard(tid);
                note_commit_error(&mut m, e);
                break;
            }
        }
        if ok {
            match b.commit(tid) {
                Ok(()) => {
                    m.committed += 1;
                    m.record_txn(t0.elapsed());
                    if delay.is_zero() {
                        m.verified += 1;
                    } else {
                        pending.push(Instant::now() + delay, tid);
                    }
                }
                Err(e) => note_commit_error(&mut m, e),
            }
        }
        pending.verify_due(b, &mut m, Instant::now());
    }
    m.elapsed = started.elapsed();
    pending.drain(b, &mut m, delay + Duration::from_secs(5));
    m.absorb(b.take_stats());
    Ok(m)
}

/// Runs a YCSB-style workload with one thread per client.
pub fn run_ycsb(spec: &WorkloadSpec, cluster: &Cluster) -> Result<Metrics, BenchError> {
    spec.validate()?;
    let deadline = Instant::now() + Duration::from_secs_f64(spec.duration_s);
    let per_client: Vec<Result<Metrics, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.clients)
            .map(|c| {
                let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(c as u64);
                let mut session = cluster.session(seed, spec.delay_ms);
                scope.spawn(move || ycsb_client(spec, &mut session, seed, deadline))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
    });
    let mut total = Metrics::default();
    for m in per_client {
        total.merge(&m?);
    }
    (total.blocks, total.keys) = cluster.totals();
    Ok(total)
}
