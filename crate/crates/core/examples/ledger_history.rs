//! An on-disk ledger: blocks of writes, versioned reads, and recovery of
//! the same digest after reopening.

use glassdb::ledger::{At, BatchWrite, Ledger, LedgerConfig, TxnId, WriteBatch};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let digest = {
        let (ledger, _) = Ledger::open(dir.path(), LedgerConfig::default())?;
        for n in 1..=5u64 {
            let tid = TxnId {
                client_id: 1,
                client_ts: n,
                counter: 0,
            };
            let writes = vec![
                BatchWrite {
                    key: b"balance".to_vec(),
                    value: (100 * n).to_string().into_bytes(),
                    tid,
                },
                BatchWrite {
                    key: format!("note{n}").into_bytes(),
                    value: b"hello".to_vec(),
                    tid,
                },
            ];
            let (block, d) = ledger.append_block(WriteBatch::new(writes), 1_000 * n)?;
            println!("block {} -> {d}", block.block_no);
        }
        let at3 = ledger.get_versioned(b"balance", At::Block(3))?;
        println!("balance at block 3: {:?}", at3.map(|(v, b)| (String::from_utf8_lossy(&v).into_owned(), b)));
        let history: Vec<String> = ledger
            .history(b"balance", 10)?
            .iter()
            .map(|v| String::from_utf8_lossy(v).into_owned())
            .collect();
        println!("history, newest first: {history:?}");
        ledger.digest()
    };
    let (reopened, report) = Ledger::open(dir.path(), LedgerConfig::default())?;
    println!("reopened: {:?}, digest unchanged: {}", report.status(), reopened.digest() == digest);
    Ok(())
}
