//! Inclusion, current-value and append-only proofs, and what happens when
//! one byte of a proof changes.

use glassdb::ledger::{BatchWrite, Ledger, LedgerConfig, TxnId, WriteBatch};
use glassdb::proofs::{
    prove_append, prove_current, prove_inclusion, verify_append, verify_current, verify_inclusion, InclusionProof,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ledger = Ledger::in_memory(LedgerConfig::default());
    for n in 1..=20u64 {
        let tid = TxnId {
            client_id: 9,
            client_ts: n,
            counter: 0,
        };
        let writes = (0..25)
            .map(|i| BatchWrite {
                key: format!("k{:03}", (n * 25 + i) % 500).into_bytes(),
                value: format!("v{n}.{i}").into_bytes(),
                tid,
            })
            .collect();
        ledger.append_block(WriteBatch::new(writes), n)?;
    }
    let old = ledger.digest_at(10).unwrap();
    let new = ledger.digest();
    let key = b"k260".to_vec();
    let (value, version) = ledger.get_latest(&key)?.unwrap();
    let claim = vec![(key.clone(), value)];

    let inc = prove_inclusion(&ledger, &new, version, std::slice::from_ref(&key))?;
    let cur = prove_current(&ledger, &new, std::slice::from_ref(&key))?;
    let app = prove_append(&ledger, &old, &new)?;
    println!("inclusion at block {version}: {} bytes, ok {}", inc.encode().len(), verify_inclusion(&inc, &new, &claim));
    println!("current value: {} bytes, ok {}", cur.encode().len(), verify_current(&cur, &new, &claim));
    println!("append-only {} -> {}: ok {}", old.block_no, new.block_no, verify_append(&app, &old, &new));

    let mut bytes = inc.encode();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let tampered = InclusionProof::decode(&bytes).is_ok_and(|p| verify_inclusion(&p, &new, &claim));
    println!("one flipped byte still verifies: {tampered}");
    Ok(())
}
