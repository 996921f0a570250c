//! Desk-scale TPC-C over the key-value interface. Rows are flattened to
//! one key per field, `<column>_<primary key parts>`, holding the field's
//! value; a customer's first, middle and last name share one `c_name`
//! field. Money is integer cents, rates are basis points.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

use super::backend::{Backend, Cluster};
use super::metrics::Metrics;
use super::workload::{Deck, WorkloadSpec};
use super::ycsb::{note_commit_error, Pending};
use super::BenchError;
use crate::ledger::TxnId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpccTxn {
    NewOrder,
    Payment,
    OrderStatus,
    Delivery,
    StockLevel,
    /// The last 10 versions of a warehouse's year-to-date balance, each
    /// proven.
    WarehouseBalance,
}

impl TpccTxn {
    pub const MIX: [(TpccTxn, u32); 6] = [
        (TpccTxn::NewOrder, 42),
        (TpccTxn::Payment, 42),
        (TpccTxn::OrderStatus, 4),
        (TpccTxn::Delivery, 4),
        (TpccTxn::StockLevel, 4),
        (TpccTxn::WarehouseBalance, 4),
    ];

    pub fn name(self) -> &'static str {
        match self {
            TpccTxn::NewOrder => "new_order",
            TpccTxn::Payment => "payment",
            TpccTxn::OrderStatus => "order_status",
            TpccTxn::Delivery => "delivery",
            TpccTxn::StockLevel => "stock_level",
            TpccTxn::WarehouseBalance => "warehouse_balance",
        }
    }
}

/// Versions returned by the warehouse balance transaction.
pub const BALANCE_VERSIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpccScale {
    pub warehouses: u64,
    pub districts: u64,
    pub customers: u64,
    pub items: u64,
}

impl TpccScale {
    pub fn desk(warehouses: u64) -> TpccScale {
        TpccScale {
            warehouses,
            districts: 10,
            customers: 30,
            items: 100,
        }
    }
}

pub const INITIAL_W_YTD: i64 = 30_000_000;
pub const INITIAL_D_YTD: i64 = 3_000_000;

pub fn key(column: &str, ids: &[u64]) -> Vec<u8> {
    let mut k = column.to_string();
    for id in ids {
        k.push('_');
        k.push_str(&id.to_string());
    }
    k.into_bytes()
}

/// Rows of the initial database, as key/value pairs.
pub fn initial_rows(scale: &TpccScale, seed: u64) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut put = |k: Vec<u8>, v: String| rows.push((k, v.into_bytes()));
    for i in 1..=scale.items {
        put(key("i_price", &[i]), rng.random_range(100..=10_000i64).to_string());
        put(key("i_name", &[i]), format!("item-{i}"));
    }
    for w in 1..=scale.warehouses {
        put(key("w_ytd", &[w]), INITIAL_W_YTD.to_string());
        put(key("w_tax", &[w]), rng.random_range(0..=2_000i64).to_string());
        put(key("w_name", &[w]), format!("warehouse-{w}"));
        for i in 1..=scale.items {
            put(key("s_quantity", &[w, i]), rng.random_range(10..=100i64).to_string());
            put(key("s_ytd", &[w, i]), "0".into());
            put(key("s_order_cnt", &[w, i]), "0".into());
        }
        for d in 1..=scale.districts {
            put(key("d_ytd", &[w, d]), INITIAL_D_YTD.to_string());
            put(key("d_tax", &[w, d]), rng.random_range(0..=2_000i64).to_string());
            put(key("d_next_o_id", &[w, d]), "1".into());
            put(key("d_next_deliv", &[w, d]), "1".into());
            for c in 1..=scale.customers {
                put(key("c_name", &[w, d, c]), format!("first-{c} OE last-{}", c % 10));
                put(key("c_discount", &[w, d, c]), rng.random_range(0..=5_000i64).to_string());
                put(key("c_balance", &[w, d, c]), "-1000".into());
                put(key("c_ytd_payment", &[w, d, c]), "1000".into());
                put(key("c_payment_cnt", &[w, d, c]), "1".into());
                put(key("c_delivery_cnt", &[w, d, c]), "0".into());
                put(key("c_last_o", &[w, d, c]), "0".into());
            }
        }
    }
    rows
}

/// Loads the initial database in transactions of `chunk` writes.
pub fn load(b: &mut impl Backend, scale: &TpccScale, seed: u64, chunk: usize) -> Result<Vec<TxnId>, BenchError> {
    let mut tids = Vec::new();
    for part in initial_rows(scale, seed).chunks(chunk.max(1)) {
        let tid = b.begin();
        for (k, v) in part {
            b.put(tid, k, v)?;
        }
        b.commit(tid)?;
        tids.push(tid);
    }
    Ok(tids)
}

/// An open transaction, discarded on drop unless committed.
struct Tx<'a, B: Backend> {
    b: &'a mut B,
    tid: TxnId,
    done: bool,
}

impl<B: Backend> Drop for Tx<'_, B> {
    fn drop(&mut self) {
        if !self.done {
            self.b.discard(self.tid);
        }
    }
}

impl<'a, B: Backend> Tx<'a, B> {
    fn begin(b: &'a mut B) -> Self {
        let tid = b.begin();
        Tx { b, tid, done: false }
    }

    fn text(&mut self, column: &str, ids: &[u64]) -> Result<String, BenchError> {
        let k = key(column, ids);
        let v = self
            .b
            .get(self.tid, &k)?
            .ok_or_else(|| BenchError::Data(format!("{} missing", String::from_utf8_lossy(&k))))?;
        String::from_utf8(v).map_err(|_| BenchError::Data(format!("{} is not text", String::from_utf8_lossy(&k))))
    }

    fn int(&mut self, column: &str, ids: &[u64]) -> Result<i64, BenchError> {
        let s = self.text(column, ids)?;
        s.parse()
            .map_err(|_| BenchError::Data(format!("{column}{ids:?} holds {s:?}, not a number")))
    }

    fn set(&mut self, column: &str, ids: &[u64], v: impl ToString) -> Result<(), BenchError> {
        self.b.put(self.tid, &key(column, ids), v.to_string().as_bytes())?;
        Ok(())
    }

    fn add(&mut self, column: &str, ids: &[u64], delta: i64) -> Result<i64, BenchError> {
        let v = self.int(column, ids)? + delta;
        self.set(column, ids, v)?;
        Ok(v)
    }

    fn commit(mut self) -> Result<TxnId, BenchError> {
        self.done = true;
        self.b.commit(self.tid)?;
        Ok(self.tid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderLine {
    pub item: u64,
    pub supply_w: u64,
    pub quantity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewOrder {
    pub w: u64,
    pub d: u64,
    pub c: u64,
    pub lines: Vec<OrderLine>,
}

pub fn new_order(b: &mut impl Backend, o: &NewOrder) -> Result<TxnId, BenchError> {
    let mut tx = Tx::begin(b);
    let (w, d, c) = (o.w, o.d, o.c);
    tx.int("w_tax", &[w])?;
    tx.int("d_tax", &[w, d])?;
    tx.int("c_discount", &[w, d, c])?;
    let o_id = tx.int("d_next_o_id", &[w, d])? as u64;
    tx.set("d_next_o_id", &[w, d], o_id + 1)?;
    tx.set("o_c_id", &[w, d, o_id], c)?;
    tx.set("o_ol_cnt", &[w, d, o_id], o.lines.len())?;
    tx.set("o_carrier_id", &[w, d, o_id], 0)?;
    tx.set("no", &[w, d, o_id], 1)?;
    tx.set("c_last_o", &[w, d, c], o_id)?;
    for (n, line) in o.lines.iter().enumerate() {
        let n = n as u64 + 1;
        let price = tx.int("i_price", &[line.item])?;
        let s = [line.supply_w, line.item];
        let q = tx.int("s_quantity", &s)?;
        let nq = if q >= line.quantity + 10 { q - line.quantity } else { q - line.quantity + 91 };
        tx.set("s_quantity", &s, nq)?;
        tx.add("s_ytd", &s, line.quantity)?;
        tx.add("s_order_cnt", &s, 1)?;
        tx.set("ol_i_id", &[w, d, o_id, n], line.item)?;
        tx.set("ol_supply_w_id", &[w, d, o_id, n], line.supply_w)?;
        tx.set("ol_quantity", &[w, d, o_id, n], line.quantity)?;
        tx.set("ol_amount", &[w, d, o_id, n], line.quantity * price)?;
    }
    tx.commit()
}

pub fn payment(b: &mut impl Backend, w: u64, d: u64, c: u64, amount: i64) -> Result<TxnId, BenchError> {
    let mut tx = Tx::begin(b);
    tx.add("w_ytd", &[w], amount)?;
    tx.add("d_ytd", &[w, d], amount)?;
    tx.add("c_balance", &[w, d, c], -amount)?;
    tx.add("c_ytd_payment", &[w, d, c], amount)?;
    tx.add("c_payment_cnt", &[w, d, c], 1)?;
    tx.commit()
}

pub fn order_status(b: &mut impl Backend, w: u64, d: u64, c: u64) -> Result<TxnId, BenchError> {
    let mut tx = Tx::begin(b);
    tx.int("c_balance", &[w, d, c])?;
    tx.text("c_name", &[w, d, c])?;
    let o = tx.int("c_last_o", &[w, d, c])? as u64;
    if o > 0 {
        tx.int("o_carrier_id", &[w, d, o])?;
        let lines = tx.int("o_ol_cnt", &[w, d, o])? as u64;
        for n in 1..=lines {
            tx.int("ol_i_id", &[w, d, o, n])?;
            tx.int("ol_quantity", &[w, d, o, n])?;
            tx.int("ol_amount", &[w, d, o, n])?;
        }
    }
    tx.commit()
}

/// Delivers the oldest undelivered order of every district.
pub fn delivery(b: &mut impl Backend, scale: &TpccScale, w: u64, carrier: u64) -> Result<TxnId, BenchError> {
    let mut tx = Tx::begin(b);
    for d in 1..=scale.districts {
        let o = tx.int("d_next_deliv", &[w, d])? as u64;
        let next = tx.int("d_next_o_id", &[w, d])? as u64;
        if o >= next {
            continue;
        }
        tx.set("no", &[w, d, o], 0)?;
        tx.set("o_carrier_id", &[w, d, o], carrier)?;
        let c = tx.int("o_c_id", &[w, d, o])? as u64;
        let lines = tx.int("o_ol_cnt", &[w, d, o])? as u64;
        let mut total = 0;
        for n in 1..=lines {
            total += tx.int("ol_amount", &[w, d, o, n])?;
        }
        tx.add("c_balance", &[w, d, c], total)?;
        tx.add("c_delivery_cnt", &[w, d, c], 1)?;
        tx.set("d_next_deliv", &[w, d], o + 1)?;
    }
    tx.commit()
}

/// Counts distinct items of the district's last 20 orders whose stock is
/// below `threshold`.
pub fn stock_level(b: &mut impl Backend, w: u64, d: u64, threshold: i64) -> Result<(TxnId, usize), BenchError> {
    let mut tx = Tx::begin(b);
    let next = tx.int("d_next_o_id", &[w, d])? as u64;
    let mut items = BTreeSet::new();
    for o in next.saturating_sub(20).max(1)..next {
        let lines = tx.int("o_ol_cnt", &[w, d, o])? as u64;
        for n in 1..=lines {
            items.insert(tx.int("ol_i_id", &[w, d, o, n])? as u64);
        }
    }
    let mut low = 0;
    for i in items {
        if tx.int("s_quantity", &[w, i])? < threshold {
            low += 1;
        }
    }
    Ok((tx.commit()?, low))
}

/// The last [`BALANCE_VERSIONS`] persisted values of `w_ytd`, newest
/// first, each proven against the shard's digest.
pub fn warehouse_balance(b: &mut impl Backend, w: u64) -> Result<Vec<i64>, BenchError> {
    let versions = b.get_history_verified(&key("w_ytd", &[w]), BALANCE_VERSIONS)?;
    versions
        .into_iter()
        .map(|(v, _)| {
            std::str::from_utf8(&v)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| BenchError::Data("w_ytd is not a number".into()))
        })
        .collect()
}

/// Random parameters for one transaction of each kind.
pub struct TpccGen {
    scale: TpccScale,
    rng: StdRng,
    deck: Deck<TpccTxn>,
}

pub enum TpccCall {
    NewOrder(NewOrder),
    Payment { w: u64, d: u64, c: u64, amount: i64 },
    OrderStatus { w: u64, d: u64, c: u64 },
    Delivery { w: u64, carrier: u64 },
    StockLevel { w: u64, d: u64, threshold: i64 },
    WarehouseBalance { w: u64 },
}

impl TpccGen {
    pub fn new(scale: TpccScale, seed: u64) -> TpccGen {
        TpccGen {
            scale,
            rng: StdRng::seed_from_u64(seed),
            deck: Deck::new(&TpccTxn::MIX),
        }
    }

    pub fn next_kind(&mut self) -> TpccTxn {
        self.deck.draw(&mut self.rng)
    }

    pub fn call(&mut self, kind: TpccTxn) -> TpccCall {
        let s = self.scale;
        let r = &mut self.rng;
        let w = r.random_range(1..=s.warehouses);
        let d = r.random_range(1..=s.districts);
        let c = r.random_range(1..=s.customers);
        match kind {
            TpccTxn::NewOrder => {
                let n = r.random_range(5..=15usize).min(s.items as usize);
                let mut items = BTreeSet::new();
                while items.len() < n {
                    items.insert(r.random_range(1..=s.items));
                }
                let lines = items
                    .into_iter()
                    .map(|item| {
                        let remote = s.warehouses > 1 && r.random_range(0..100) == 0;
                        let supply_w = if remote {
                            (w % s.warehouses) + 1
                        } else {
                            w
                        };
                        OrderLine {
                            item,
                            supply_w,
                            quantity: r.random_range(1..=10),
                        }
                    })
                    .collect();
                TpccCall::NewOrder(NewOrder { w, d, c, lines })
            }
            TpccTxn::Payment => TpccCall::Payment {
                w,
                d,
                c,
                amount: r.random_range(100..=500_000),
            },
            TpccTxn::OrderStatus => TpccCall::OrderStatus { w, d, c },
            TpccTxn::Delivery => TpccCall::Delivery {
                w,
                carrier: r.random_range(1..=10),
            },
            TpccTxn::StockLevel => TpccCall::StockLevel {
                w,
                d,
                threshold: r.random_range(10..=20),
            },
            TpccTxn::WarehouseBalance => TpccCall::WarehouseBalance { w },
        }
    }
}

/// Runs one call. `Ok(Some(tid))` for a committed transaction awaiting
/// verification, `Ok(None)` for work verified on the spot.
pub fn execute(b: &mut impl Backend, scale: &TpccScale, call: &TpccCall) -> Result<Option<TxnId>, BenchError> {
    Ok(Some(match call {
        TpccCall::NewOrder(o) => new_order(b, o)?,
        TpccCall::Payment { w, d, c, amount } => payment(b, *w, *d, *c, *amount)?,
        TpccCall::OrderStatus { w, d, c } => order_status(b, *w, *d, *c)?,
        TpccCall::Delivery { w, carrier } => delivery(b, scale, *w, *carrier)?,
        TpccCall::StockLevel { w, d, threshold } => stock_level(b, *w, *d, *threshold)?.0,
        TpccCall::WarehouseBalance { w } => {
            warehouse_balance(b, *w)?;
            return Ok(None);
        }
    }))
}

fn tpcc_client(
    spec: &WorkloadSpec,
    scale: &TpccScale,
    b: &mut impl Backend,
    seed: u64,
    deadline: Instant,
) -> Result<Metrics, BenchError> {
    let mut gen = TpccGen::new(*scale, seed);
    let delay = Duration::from_millis(spec.delay_ms);
    let mut m = Metrics::default();
    let mut pending = Pending::default();
    let started = Instant::now();
    while Instant::now() < deadline {
        let kind = gen.next_kind();
        m.count_op(kind.name());
        let call = gen.call(kind);
        let t0 = Instant::now();
        match execute(b, scale, &call) {
            Ok(done) => {
                m.committed += 1;
                m.record_txn(t0.elapsed());
                match done {
                    Some(tid) if !delay.is_zero() => pending.push(Instant::now() + delay, tid),
                    _ => m.verified += 1,
                }
            }
            Err(BenchError::Client(e)) => note_commit_error(&mut m, e),
            // Reads can straddle another transaction's commit across
            // shards; validation would refuse such a snapshot anyway.
            Err(BenchError::Data(reason)) => {
                log::debug!("{} gave up on an inconsistent read: {reason}", kind.name());
                m.aborted += 1;
            }
            Err(e) => return Err(e),
        }
        pending.verify_due(b, &mut m, Instant::now());
    }
    m.elapsed = started.elapsed();
    pending.drain(b, &mut m, delay + Duration::from_secs(5));
    m.absorb(b.take_stats());
    Ok(m)
}

/// Loads a desk-scale database and runs the TPC-C mix.
pub fn run_tpcc(spec: &WorkloadSpec, cluster: &Cluster) -> Result<Metrics, BenchError> {
    spec.validate()?;
    let scale = TpccScale::desk(spec.warehouses as u64);
    {
        let mut loader = cluster.session(spec.seed ^ 0x5eed, 0);
        load(&mut loader, &scale, spec.seed, 200)?;
    }
    let deadline = Instant::now() + Duration::from_secs_f64(spec.duration_s);
    let per_client: Vec<Result<Metrics, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.clients)
            .map(|c| {
                let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(c as u64);
                let mut session = cluster.session(seed, spec.delay_ms);
                let scale = &scale;
                scope.spawn(move || tpcc_client(spec, scale, &mut session, seed, deadline))
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
