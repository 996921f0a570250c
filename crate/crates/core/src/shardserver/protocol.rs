//! Request/reply messages and their frames.
//!
//! Frame: `len u32 ‖ kind u8 ‖ correlation u64 ‖ payload`, big-endian, where
//! `len` counts everything after itself. Request and reply kinds are
//! separate number spaces; a reply carries its request's correlation id.

use std::io::{self, Read, Write};

use crate::codec::{DecodeError, Reader, Writer};
use crate::ledger::{At, DataBlock, LedgerDigest, TxnId};
use crate::proofs::{AppendOnlyProof, CurrentValueProof, InclusionProof, ProofBundle};
use crate::txnmgr::{AbortReason, Promise, Transaction, Vote};

/// Frames larger than this are refused before allocation.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Prepare(Transaction),
    Commit(TxnId),
    Abort(TxnId),
    Get {
        key: Vec<u8>,
        at: At,
    },
    GetDigest,
    /// Persist everything pending now.
    Flush,
    /// Proofs for committed transactions: their writes at the promised
    /// blocks, plus the reads they made.
    GetProof {
        tids: Vec<TxnId>,
        from: LedgerDigest,
        /// Digest the reads were served at, if any read was persisted.
        read_at: Option<LedgerDigest>,
        /// Keys whose read versions must be current at `read_at`.
        current_keys: Vec<Vec<u8>>,
        /// Reads of unpersisted versions: (version block, key).
        pending_reads: Vec<(u64, Vec<u8>)>,
    },
    /// Inclusion proof for `keys` at `block` (default: the digest's own
    /// block) under `at` (default: current), plus an append-only proof
    /// from `from` to `at`.
    ProveRead {
        from: LedgerDigest,
        at: Option<LedgerDigest>,
        block: Option<u64>,
        keys: Vec<Vec<u8>>,
    },
    ProveAppend {
        from: LedgerDigest,
        to: Option<LedgerDigest>,
    },
    /// A persisted block with the signed transactions that wrote it.
    AuditBlock {
        block_no: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    NotFound,
    UnknownDigest,
    BadRequest,
    BadSignature,
    Aborted,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Vote(Vote),
    Promise(Promise),
    Ack,
    Value {
        entry: Option<(Vec<u8>, u64)>,
        digest: LedgerDigest,
    },
    Digest(LedgerDigest),
    TxnProofs {
        digest: LedgerDigest,
        to_read: Option<AppendOnlyProof>,
        current: Option<CurrentValueProof>,
        bundle: ProofBundle,
        to_new: AppendOnlyProof,
    },
    ReadProof {
        digest: LedgerDigest,
        proof: InclusionProof,
        append: AppendOnlyProof,
    },
    AppendProof {
        digest: LedgerDigest,
        proof: AppendOnlyProof,
    },
    AuditBlock {
        digest: LedgerDigest,
        block: DataBlock,
        txns: Vec<Transaction>,
        manifest: Vec<(Vec<u8>, TxnId)>,
    },
    NotYetPersisted {
        due: u64,
        head: u64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Reply {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Reply {
        Reply::Error {
            code,
            message: message.into(),
        }
    }
}

fn put_opt<T>(w: &mut Writer, v: &Option<T>, f: impl FnOnce(&mut Writer, &T)) {
    match v {
        Some(x) => {
            w.bool(true);
            f(w, x);
        }
        None => {
            w.bool(false);
        }
    }
}

fn get_opt<'a, T>(
    r: &mut Reader<'a>,
    f: impl FnOnce(&mut Reader<'a>) -> Result<T, DecodeError>,
) -> Result<Option<T>, DecodeError> {
    if r.bool()? {
        f(r).map(Some)
    } else {
        Ok(None)
    }
}

fn put_keys(w: &mut Writer, keys: &[Vec<u8>]) {
    w.count(keys.len());
    for k in keys {
        w.bytes(k);
    }
}

fn get_keys(r: &mut Reader<'_>) -> Result<Vec<Vec<u8>>, DecodeError> {
    let n = r.count(4)?;
    (0..n).map(|_| r.vec()).collect()
}

fn put_at(w: &mut Writer, at: At) {
    match at {
        At::Latest => w.u8(0),
        At::Block(b) => w.u8(1).u64(b),
        At::Time(t) => w.u8(2).u64(t),
    };
}

fn get_at(r: &mut Reader<'_>) -> Result<At, DecodeError> {
    Ok(match r.u8()? {
        0 => At::Latest,
        1 => At::Block(r.u64()?),
        2 => At::Time(r.u64()?),
        tag => return Err(DecodeError::BadTag { what: "read point", tag }),
    })
}

fn put_digest(w: &mut Writer, d: &LedgerDigest) {
    d.encode_into(w);
}

fn put_vote(w: &mut Writer, v: &Vote) {
    match v {
        Vote::Commit => {
            w.u8(0);
        }
        Vote::Abort(AbortReason::QueueFull) => {
            w.u8(1);
        }
        Vote::Abort(AbortReason::StaleRead { key, read, current }) => {
            w.u8(2).bytes(key).u64(*read).u64(*current);
        }
        Vote::Abort(AbortReason::Conflict { key, holder }) => {
            w.u8(3).bytes(key);
            holder.encode_into(w);
        }
        Vote::Abort(AbortReason::Decided) => {
            w.u8(4);
        }
    }
}

fn get_vote(r: &mut Reader<'_>) -> Result<Vote, DecodeError> {
    Ok(match r.u8()? {
        0 => Vote::Commit,
        1 => Vote::Abort(AbortReason::QueueFull),
        2 => Vote::Abort(AbortReason::StaleRead {
            key: r.vec()?,
            read: r.u64()?,
            current: r.u64()?,
        }),
        3 => Vote::Abort(AbortReason::Conflict {
            key: r.vec()?,
            holder: TxnId::decode_from(r)?,
        }),
        4 => Vote::Abort(AbortReason::Decided),
        tag => return Err(DecodeError::BadTag { what: "vote", tag }),
    })
}

impl ErrorCode {
    fn tag(self) -> u8 {
        match self {
            ErrorCode::NotFound => 1,
            ErrorCode::UnknownDigest => 2,
            ErrorCode::BadRequest => 3,
            ErrorCode::BadSignature => 4,
            ErrorCode::Aborted => 5,
            ErrorCode::Internal => 6,
        }
    }

    fn from_tag(tag: u8) -> Result<ErrorCode, DecodeError> {
        Ok(match tag {
            1 => ErrorCode::NotFound,
            2 => ErrorCode::UnknownDigest,
            3 => ErrorCode::BadRequest,
            4 => ErrorCode::BadSignature,
            5 => ErrorCode::Aborted,
            6 => ErrorCode::Internal,
            tag => return Err(DecodeError::BadTag { what: "error code", tag }),
        })
    }
}

fn proof_bytes<T>(r: &mut Reader<'_>, f: impl FnOnce(&[u8]) -> Result<T, DecodeError>) -> Result<T, DecodeError> {
    f(r.bytes()?)
}

impl Request {
    pub fn kind(&self) -> u8 {
        match self {
            Request::Prepare(_) => 1,
            Request::Commit(_) => 2,
            Request::Abort(_) => 3,
            Request::Get { .. } => 4,
            Request::GetDigest => 5,
            Request::Flush => 6,
            Request::GetProof { .. } => 7,
            Request::ProveRead { .. } => 8,
            Request::ProveAppend { .. } => 9,
            Request::AuditBlock { .. } => 10,
        }
    }

    pub fn encode_payload(&self, w: &mut Writer) {
        match self {
            Request::Prepare(t) => {
                w.bytes(&t.encode());
            }
            Request::Commit(tid) | Request::Abort(tid) => tid.encode_into(w),
            Request::Get { key, at } => {
                w.bytes(key);
                put_at(w, *at);
            }
            Request::GetDigest | Request::Flush => {}
            Request::GetProof {
                tids,
                from,
                read_at,
                current_keys,
                pending_reads,
            } => {
                w.count(tids.len());
                for t in tids {
                    t.encode_into(w);
                }
                put_digest(w, from);
                put_opt(w, read_at, put_digest);
                put_keys(w, current_keys);
                w.count(pending_reads.len());
                for (b, k) in pending_reads {
                    w.u64(*b).bytes(k);
                }
            }
            Request::ProveRead { from, at, block, keys } => {
                put_digest(w, from);
                put_opt(w, at, put_digest);
                put_opt(w, block, |w, b| {
                    w.u64(*b);
                });
                put_keys(w, keys);
            }
            Request::ProveAppend { from, to } => {
                put_digest(w, from);
                put_opt(w, to, put_digest);
            }
            Request::AuditBlock { block_no } => {
                w.u64(*block_no);
            }
        }
    }

    pub fn decode_payload(kind: u8, payload: &[u8]) -> Result<Request, DecodeError> {
        let mut r = Reader::new(payload);
        let req = match kind {
            1 => Request::Prepare(Transaction::decode(r.bytes()?)?),
            2 => Request::Commit(TxnId::decode_from(&mut r)?),
            3 => Request::Abort(TxnId::decode_from(&mut r)?),
            4 => Request::Get {
                key: r.vec()?,
                at: get_at(&mut r)?,
            },
            5 => Request::GetDigest,
            6 => Request::Flush,
            7 => {
                let n = r.count(TxnId::ENCODED_LEN)?;
                let tids = (0..n).map(|_| TxnId::decode_from(&mut r)).collect::<Result<_, _>>()?;
                let from = LedgerDigest::decode_from(&mut r)?;
                let read_at = get_opt(&mut r, LedgerDigest::decode_from)?;
                let current_keys = get_keys(&mut r)?;
                let n = r.count(12)?;
                let mut pending_reads = Vec::with_capacity(n);
                for _ in 0..n {
                    pending_reads.push((r.u64()?, r.vec()?));
                }
                Request::GetProof {
                    tids,
                    from,
                    read_at,
                    current_keys,
                    pending_reads,
                }
            }
            8 => Request::ProveRead {
                from: LedgerDigest::decode_from(&mut r)?,
                at: get_opt(&mut r, LedgerDigest::decode_from)?,
                block: get_opt(&mut r, |r| r.u64())?,
                keys: get_keys(&mut r)?,
            },
            9 => Request::ProveAppend {
                from: LedgerDigest::decode_from(&mut r)?,
                to: get_opt(&mut r, LedgerDigest::decode_from)?,
            },
            10 => Request::AuditBlock { block_no: r.u64()? },
            tag => return Err(DecodeError::BadTag { what: "request kind", tag }),
        };
        r.finish()?;
        Ok(req)
    }
}

impl Reply {
    pub fn kind(&self) -> u8 {
        match self {
            Reply::Vote(_) => 1,
            Reply::Promise(_) => 2,
            Reply::Ack => 3,
            Reply::Value { .. } => 4,
            Reply::Digest(_) => 5,
            Reply::TxnProofs { .. } => 6,
            Reply::ReadProof { .. } => 7,
            Reply::AppendProof { .. } => 8,
            Reply::AuditBlock { .. } => 9,
            Reply::NotYetPersisted { .. } => 10,
            Reply::Error { .. } => 11,
        }
    }

    pub fn encode_payload(&self, w: &mut Writer) {
        match self {
            Reply::Vote(v) => put_vote(w, v),
            Reply::Promise(p) => p.encode_into(w),
            Reply::Ack => {}
            Reply::Value { entry, digest } => {
                put_opt(w, entry, |w, (v, b)| {
                    w.bytes(v).u64(*b);
                });
                put_digest(w, digest);
            }
            Reply::Digest(d) => put_digest(w, d),
            Reply::TxnProofs {
                digest,
                to_read,
                current,
                bundle,
                to_new,
            } => {
                put_digest(w, digest);
                put_opt(w, to_read, |w, p| {
                    w.bytes(&p.encode());
                });
                put_opt(w, current, |w, p| {
                    w.bytes(&p.encode());
                });
                w.bytes(&bundle.encode()).bytes(&to_new.encode());
            }
            Reply::ReadProof { digest, proof, append } => {
                put_digest(w, digest);
                w.bytes(&proof.encode()).bytes(&append.encode());
            }
            Reply::AppendProof { digest, proof } => {
                put_digest(w, digest);
                w.bytes(&proof.encode());
            }
            Reply::AuditBlock {
                digest,
                block,
                txns,
                manifest,
            } => {
                put_digest(w, digest);
                w.bytes(&block.encode()).count(txns.len());
                for t in txns {
                    w.bytes(&t.encode());
                }
                w.count(manifest.len());
                for (k, tid) in manifest {
                    w.bytes(k);
                    tid.encode_into(w);
                }
            }
            Reply::NotYetPersisted { due, head } => {
                w.u64(*due).u64(*head);
            }
            Reply::Error { code, message } => {
                w.u8(code.tag()).str(message);
            }
        }
    }

    pub fn decode_payload(kind: u8, payload: &[u8]) -> Result<Reply, DecodeError> {
        let mut r = Reader::new(payload);
        let reply = match kind {
            1 => Reply::Vote(get_vote(&mut r)?),
            2 => Reply::Promise(Promise::decode_from(&mut r)?),
            3 => Reply::Ack,
            4 => Reply::Value {
                entry: get_opt(&mut r, |r| Ok((r.vec()?, r.u64()?)))?,
                digest: LedgerDigest::decode_from(&mut r)?,
            },
            5 => Reply::Digest(LedgerDigest::decode_from(&mut r)?),
            6 => Reply::TxnProofs {
                digest: LedgerDigest::decode_from(&mut r)?,
                to_read: get_opt(&mut r, |r| proof_bytes(r, AppendOnlyProof::decode))?,
                current: get_opt(&mut r, |r| proof_bytes(r, CurrentValueProof::decode))?,
                bundle: proof_bytes(&mut r, ProofBundle::decode)?,
                to_new: proof_bytes(&mut r, AppendOnlyProof::decode)?,
            },
            7 => Reply::ReadProof {
                digest: LedgerDigest::decode_from(&mut r)?,
                proof: proof_bytes(&mut r, InclusionProof::decode)?,
                append: proof_bytes(&mut r, AppendOnlyProof::decode)?,
            },
            8 => Reply::AppendProof {
                digest: LedgerDigest::decode_from(&mut r)?,
                proof: proof_bytes(&mut r, AppendOnlyProof::decode)?,
            },
            9 => {
                let digest = LedgerDigest::decode_from(&mut r)?;
                let block = DataBlock::decode(r.bytes()?)?;
                let n = r.count(4)?;
                let txns = (0..n)
                    .map(|_| Transaction::decode(r.bytes()?))
                    .collect::<Result<_, _>>()?;
                let n = r.count(4 + TxnId::ENCODED_LEN)?;
                let mut manifest = Vec::with_capacity(n);
                for _ in 0..n {
                    manifest.push((r.vec()?, TxnId::decode_from(&mut r)?));
                }
                Reply::AuditBlock {
                    digest,
                    block,
                    txns,
                    manifest,
                }
            }
            10 => Reply::NotYetPersisted {
                due: r.u64()?,
                head: r.u64()?,
            },
            11 => Reply::Error {
                code: ErrorCode::from_tag(r.u8()?)?,
                message: r.string()?,
            },
            tag => return Err(DecodeError::BadTag { what: "reply kind", tag }),
        };
        r.finish()?;
        Ok(reply)
    }
}

/// One message on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub correlation: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn request(correlation: u64, req: &Request) -> Frame {
        let mut w = Writer::new();
        req.encode_payload(&mut w);
        Frame {
            kind: req.kind(),
            correlation,
            payload: w.into_bytes(),
        }
    }

    pub fn reply(correlation: u64, reply: &Reply) -> Frame {
        let mut w = Writer::new();
        reply.encode_payload(&mut w);
        Frame {
            kind: reply.kind(),
            correlation,
            payload: w.into_bytes(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(13 + self.payload.len());
        w.u32((9 + self.payload.len()) as u32)
            .u8(self.kind)
            .u64(self.correlation)
            .raw(&self.payload);
        w.into_bytes()
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        out.write_all(&self.to_bytes())?;
        out.flush()
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from(input: &mut impl Read) -> io::Result<Option<Frame>> {
        let mut len = [0u8; 4];
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(len) as usize;
        if !(9..=MAX_FRAME).contains(&len) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {len}")));
        }
        let mut body = vec![0u8; len];
        input.read_exact(&mut body)?;
        Ok(Some(Frame {
            kind: body[0],
            correlation: u64::from_be_bytes(body[1..9].try_into().unwrap()),
            payload: body[9..].to_vec(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let req = Request::Get {
            key: b"k".to_vec(),
            at: At::Block(3),
        };
        let f = Frame::request(42, &req);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], &(bytes.len() as u32 - 4).to_be_bytes());
        let back = Frame::read_from(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(back.correlation, 42);
        assert_eq!(Request::decode_payload(back.kind, &back.payload).unwrap(), req);
        assert!(Frame::read_from(&mut &b""[..]).unwrap().is_none());
    }

    #[test]
    fn replies_round_trip() {
        let d = LedgerDigest::genesis();
        for reply in [
            Reply::Ack,
            Reply::Vote(Vote::Abort(AbortReason::StaleRead {
                key: b"x".to_vec(),
                read: 1,
                current: 2,
            })),
            Reply::Value {
                entry: Some((b"v".to_vec(), 9)),
                digest: d,
            },
            Reply::NotYetPersisted { due: 5, head: 4 },
            Reply::error(ErrorCode::UnknownDigest, "nope"),
        ] {
            let f = Frame::reply(1, &reply);
            assert_eq!(Reply::decode_payload(f.kind, &f.payload).unwrap(), reply);
        }
    }
}
