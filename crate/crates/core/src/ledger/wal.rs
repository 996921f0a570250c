//! Write-ahead log.
//!
//! File layout: magic `GLWL`, version u32, then frames of
//! `len u32 ‖ crc32 u32 ‖ kind u8 ‖ payload`, where `len` counts kind and
//! payload and the CRC covers the same bytes. On open the log is replayed up
//! to the first frame that is short, fails its checksum or does not decode;
//! everything from there on is cut off.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use parking_lot::Mutex;

use super::block::{BatchWrite, TxnId};
use super::LedgerError;
use crate::codec::{DecodeError, Reader, Writer};

pub const WAL_MAGIC: &[u8; 4] = b"GLWL";
pub const WAL_VERSION: u32 = 1;

const KIND_PREPARE: u8 = 1;
const KIND_COMMIT: u8 = 2;
const KIND_ABORT: u8 = 3;
const KIND_BATCH: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalRecord {
    /// A transaction voted commit; `txn` is its signed encoding.
    Prepare { tid: TxnId, txn: Vec<u8> },
    /// Decision to commit, with the block promised for each written key.
    Commit { tid: TxnId, promised: Vec<(Vec<u8>, u64)> },
    Abort { tid: TxnId },
    /// Contents of a block about to be appended. Logged before any tree
    /// write so a crash can be replayed into the identical block.
    Batch {
        block_no: u64,
        timestamp_ms: u64,
        writes: Vec<BatchWrite>,
    },
}

impl WalRecord {
    fn kind(&self) -> u8 {
        match self {
            WalRecord::Prepare { .. } => KIND_PREPARE,
            WalRecord::Commit { .. } => KIND_COMMIT,
            WalRecord::Abort { .. } => KIND_ABORT,
            WalRecord::Batch { .. } => KIND_BATCH,
        }
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.kind());
        match self {
            WalRecord::Prepare { tid, txn } => {
                tid.encode_into(&mut w);
                w.bytes(txn);
            }
            WalRecord::Commit { tid, promised } => {
                tid.encode_into(&mut w);
                w.count(promised.len());
                for (k, b) in promised {
                    w.bytes(k).u64(*b);
                }
            }
            WalRecord::Abort { tid } => tid.encode_into(&mut w),
            WalRecord::Batch {
                block_no,
                timestamp_ms,
                writes,
            } => {
                w.u64(*block_no).u64(*timestamp_ms).count(writes.len());
                for bw in writes {
                    bw.encode_into(&mut w);
                }
            }
        }
        w.into_bytes()
    }

    fn decode_body(body: &[u8]) -> Result<WalRecord, DecodeError> {
        let mut r = Reader::new(body);
        let rec = match r.u8()? {
            KIND_PREPARE => WalRecord::Prepare {
                tid: TxnId::decode_from(&mut r)?,
                txn: r.vec()?,
            },
            KIND_COMMIT => {
                let tid = TxnId::decode_from(&mut r)?;
                let n = r.count(12)?;
                let mut promised = Vec::with_capacity(n);
                for _ in 0..n {
                    promised.push((r.vec()?, r.u64()?));
                }
                WalRecord::Commit { tid, promised }
            }
            KIND_ABORT => WalRecord::Abort {
                tid: TxnId::decode_from(&mut r)?,
            },
            KIND_BATCH => {
                let block_no = r.u64()?;
                let timestamp_ms = r.u64()?;
                let n = r.count(8 + TxnId::ENCODED_LEN)?;
                let mut writes = Vec::with_capacity(n);
                for _ in 0..n {
                    writes.push(BatchWrite::decode_from(&mut r)?);
                }
                WalRecord::Batch {
                    block_no,
                    timestamp_ms,
                    writes,
                }
            }
            tag => return Err(DecodeError::BadTag { what: "wal record", tag }),
        };
        r.finish()?;
        Ok(rec)
    }

    pub fn encode_frame(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut out = Vec::with_capacity(body.len() + 8);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&crc32fast::hash(&body).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }
}

/// Parses frames from `buf` (header already stripped). Returns the records
/// and the number of bytes consumed by valid frames.
pub fn parse_frames(buf: &[u8]) -> (Vec<WalRecord>, usize) {
    let mut records = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 8 {
        let len = u32::from_be_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_be_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
        let Some(body) = buf.get(pos + 8..pos + 8 + len) else {
            break;
        };
        if crc32fast::hash(body) != crc {
            break;
        }
        match WalRecord::decode_body(body) {
            Ok(rec) => records.push(rec),
            Err(_) => break,
        }
        pos += 8 + len;
    }
    (records, pos)
}

enum Sink {
    File(BufWriter<File>),
    Memory { frames: usize },
}

pub struct Wal {
    sink: Mutex<Sink>,
}

/// What [`Wal::open`] found on disk.
#[derive(Debug, Default)]
pub struct WalReplay {
    pub records: Vec<WalRecord>,
    pub truncated_bytes: u64,
}

impl Wal {
    pub fn memory() -> Wal {
        Wal {
            sink: Mutex::new(Sink::Memory { frames: 0 }),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<(Wal, WalReplay), LedgerError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let mut replay = WalReplay::default();
        if buf.is_empty() {
            file.write_all(WAL_MAGIC)?;
            file.write_all(&WAL_VERSION.to_be_bytes())?;
            file.sync_data()?;
        } else {
            if buf.len() < 8 || &buf[..4] != WAL_MAGIC || buf[4..8] != WAL_VERSION.to_be_bytes() {
                return Err(LedgerError::Corrupt(format!("bad WAL header in {}", path.display())));
            }
            let (records, used) = parse_frames(&buf[8..]);
            let valid = 8 + used;
            replay.records = records;
            replay.truncated_bytes = (buf.len() - valid) as u64;
            if replay.truncated_bytes > 0 {
                file.set_len(valid as u64)?;
                file.sync_data()?;
            }
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Wal {
                sink: Mutex::new(Sink::File(BufWriter::new(file))),
            },
            replay,
        ))
    }

    /// Appends a record; with `durable` the call returns only after the
    /// record is on stable storage.
    pub fn append(&self, rec: &WalRecord, durable: bool) -> io::Result<()> {
        let frame = rec.encode_frame();
        let mut sink = self.sink.lock();
        match &mut *sink {
            Sink::File(w) => {
                w.write_all(&frame)?;
                if durable {
                    w.flush()?;
                    w.get_ref().sync_data()?;
                }
            }
            Sink::Memory { frames } => *frames += 1,
        }
        Ok(())
    }

    pub fn sync(&self) -> io::Result<()> {
        if let Sink::File(w) = &mut *self.sink.lock() {
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        Ok(())
    }
}
