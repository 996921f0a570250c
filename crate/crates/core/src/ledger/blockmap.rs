//! Block map: which data block was persisted under each block number.
//!
//! File layout: magic `GLBM`, version u32, then fixed 40-byte records of
//! `block_no u64 ‖ block hash`. Records must be numbered 1, 2, 3, ...; the
//! file is cut at the first short or out-of-sequence record.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use super::LedgerError;
use crate::hash::{Hash, HASH_LEN};

pub const BLOCK_MAP_MAGIC: &[u8; 4] = b"GLBM";
pub const BLOCK_MAP_VERSION: u32 = 1;
const RECORD: usize = 8 + HASH_LEN;

pub struct BlockMap {
    hashes: Vec<Hash>,
    file: Option<File>,
    truncated_bytes: u64,
}

impl BlockMap {
    pub fn memory() -> BlockMap {
        BlockMap {
            hashes: Vec::new(),
            file: None,
            truncated_bytes: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<BlockMap, LedgerError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let mut hashes = Vec::new();
        let mut truncated_bytes = 0;
        if buf.is_empty() {
            file.write_all(BLOCK_MAP_MAGIC)?;
            file.write_all(&BLOCK_MAP_VERSION.to_be_bytes())?;
            file.sync_data()?;
        } else {
            if buf.len() < 8 || &buf[..4] != BLOCK_MAP_MAGIC || buf[4..8] != BLOCK_MAP_VERSION.to_be_bytes() {
                return Err(LedgerError::Corrupt(format!("bad block map header in {}", path.display())));
            }
            let mut pos = 8;
            while buf.len() - pos >= RECORD {
                let no = u64::from_be_bytes(buf[pos..pos + 8].try_into().unwrap());
                if no != hashes.len() as u64 + 1 {
                    break;
                }
                hashes.push(Hash(buf[pos + 8..pos + RECORD].try_into().unwrap()));
                pos += RECORD;
            }
            truncated_bytes = (buf.len() - pos) as u64;
            if truncated_bytes > 0 {
                file.set_len(pos as u64)?;
                file.sync_data()?;
            }
        }
        Ok(BlockMap {
            hashes,
            file: Some(file),
            truncated_bytes,
        })
    }

    pub fn len(&self) -> u64 {
        self.hashes.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn get(&self, block_no: u64) -> Option<Hash> {
        block_no
            .checked_sub(1)
            .and_then(|i| self.hashes.get(i as usize))
            .copied()
    }

    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    /// Records `block_no` durably. Re-recording an identical entry is a
    /// no-op; anything else out of sequence is an error.
    pub fn append(&mut self, block_no: u64, hash: Hash) -> Result<(), LedgerError> {
        if let Some(existing) = self.get(block_no) {
            if existing == hash {
                return Ok(());
            }
            return Err(LedgerError::Corrupt(format!(
                "block {block_no} already mapped to {existing}, not {hash}"
            )));
        }
        if block_no != self.len() + 1 {
            return Err(LedgerError::Corrupt(format!(
                "block map gap: next is {}, got {block_no}",
                self.len() + 1
            )));
        }
        if let Some(f) = &mut self.file {
            let mut rec = [0u8; RECORD];
            rec[..8].copy_from_slice(&block_no.to_be_bytes());
            rec[8..].copy_from_slice(hash.as_bytes());
            f.write_all(&rec)?;
            f.sync_data()?;
        }
        self.hashes.push(hash);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reopen_keeps_records_and_cuts_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.map");
        {
            let mut m = BlockMap::open(&path).unwrap();
            m.append(1, Hash::of(b"1")).unwrap();
            m.append(2, Hash::of(b"2")).unwrap();
            m.append(2, Hash::of(b"2")).unwrap();
            assert!(m.append(2, Hash::of(b"x")).is_err());
            assert!(m.append(4, Hash::of(b"4")).is_err());
        }
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(&3u64.to_be_bytes()).unwrap();
        }
        let m = BlockMap::open(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.truncated_bytes(), 8);
        assert_eq!(m.get(2), Some(Hash::of(b"2")));
        assert_eq!(m.get(0), None);
        assert_eq!(m.get(3), None);
    }
}
