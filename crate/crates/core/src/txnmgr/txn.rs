use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::Rng;

use super::TxnError;
use crate::codec::{DecodeError, Reader, Writer};
use crate::hash::Hash;
use crate::ledger::{LedgerDigest, TxnId};

const SIGNING_DOMAIN: &[u8] = b"glassdb-txn-v1";

/// Client ids are derived from the public key, so any party can check
/// that a transaction's id and key belong together.
pub fn client_id_of(public_key: &[u8; 32]) -> u64 {
    let h = Hash::of(public_key);
    u64::from_be_bytes(h.0[..8].try_into().unwrap())
}

/// A client's Ed25519 keypair.
#[derive(Clone)]
pub struct ClientKey {
    signing: SigningKey,
}

impl std::fmt::Debug for ClientKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClientKey({:016x})", self.client_id())
    }
}

impl ClientKey {
    pub fn from_seed(seed: [u8; 32]) -> ClientKey {
        ClientKey {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn generate(rng: &mut impl Rng) -> ClientKey {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn client_id(&self) -> u64 {
        client_id_of(&self.public_key())
    }
}

/// A signed transaction as submitted to a shard. Read and write sets are
/// sorted by key and hold each key at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tid: TxnId,
    pub public_key: [u8; 32],
    /// Keys read and the version (block number) each read observed.
    pub read_set: Vec<(Vec<u8>, u64)>,
    pub write_set: Vec<(Vec<u8>, Vec<u8>)>,
    pub signature: [u8; 64],
}

impl Transaction {
    /// Builds and signs a transaction. Later writes to a key replace
    /// earlier ones; a key read twice keeps its first observed version.
    pub fn sign(
        key: &ClientKey,
        tid: TxnId,
        mut read_set: Vec<(Vec<u8>, u64)>,
        write_set: Vec<(Vec<u8>, Vec<u8>)>,
    ) -> Transaction {
        read_set.sort_by(|a, b| a.0.cmp(&b.0));
        read_set.dedup_by(|later, first| later.0 == first.0);
        let mut writes: Vec<_> = write_set.into_iter().rev().collect();
        writes.sort_by(|a, b| a.0.cmp(&b.0));
        writes.dedup_by(|later, first| later.0 == first.0);
        let mut t = Transaction {
            tid,
            public_key: key.public_key(),
            read_set,
            write_set: writes,
            signature: [0; 64],
        };
        t.signature = key.signing.sign(&t.signing_bytes()).to_bytes();
        t
    }

    fn encode_unsigned(&self, w: &mut Writer) {
        self.tid.encode_into(w);
        w.raw(&self.public_key).count(self.read_set.len());
        for (k, v) in &self.read_set {
            w.bytes(k).u64(*v);
        }
        w.count(self.write_set.len());
        for (k, v) in &self.write_set {
            w.bytes(k).bytes(v);
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(SIGNING_DOMAIN);
        self.encode_unsigned(&mut w);
        w.into_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_unsigned(&mut w);
        w.raw(&self.signature);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Transaction, DecodeError> {
        let mut r = Reader::new(bytes);
        let t = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(t)
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Transaction, DecodeError> {
        let tid = TxnId::decode_from(r)?;
        let public_key = r.array()?;
        let n = r.count(12)?;
        let mut read_set = Vec::with_capacity(n);
        for _ in 0..n {
            read_set.push((r.vec()?, r.u64()?));
        }
        let n = r.count(8)?;
        let mut write_set = Vec::with_capacity(n);
        for _ in 0..n {
            write_set.push((r.vec()?, r.vec()?));
        }
        let signature = r.array()?;
        let t = Transaction {
            tid,
            public_key,
            read_set,
            write_set,
            signature,
        };
        if !t.read_set.windows(2).all(|w| w[0].0 < w[1].0) || !t.write_set.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(DecodeError::Invalid("transaction key sets must be sorted and unique"));
        }
        Ok(t)
    }

    /// Checks the signature and that the client id belongs to the key.
    pub fn verify_signature(&self) -> Result<(), TxnError> {
        if client_id_of(&self.public_key) != self.tid.client_id {
            return Err(TxnError::BadSignature(self.tid));
        }
        let vk = VerifyingKey::from_bytes(&self.public_key).map_err(|_| TxnError::BadSignature(self.tid))?;
        vk.verify_strict(&self.signing_bytes(), &Signature::from_bytes(&self.signature))
            .map_err(|_| TxnError::BadSignature(self.tid))
    }

    pub fn value_of(&self, key: &[u8]) -> Option<&[u8]> {
        self.write_set
            .binary_search_by(|(k, _)| k.as_slice().cmp(key))
            .ok()
            .map(|i| self.write_set[i].1.as_slice())
    }
}

/// One write named in a promise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromisedWrite {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub block_no: u64,
}

/// The shard's commitment to persist each write of `tid` in a named block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Promise {
    pub tid: TxnId,
    pub writes: Vec<PromisedWrite>,
    /// Shard digest when the promise was issued.
    pub digest: LedgerDigest,
}

impl Promise {
    /// Latest block any write of this promise lands in; 0 for read-only.
    pub fn due_block(&self) -> u64 {
        self.writes.iter().map(|w| w.block_no).max().unwrap_or(0)
    }

    pub fn encode_into(&self, w: &mut Writer) {
        self.tid.encode_into(w);
        self.digest.encode_into(w);
        w.count(self.writes.len());
        for pw in &self.writes {
            w.bytes(&pw.key).bytes(&pw.value).u64(pw.block_no);
        }
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Promise, DecodeError> {
        let tid = TxnId::decode_from(r)?;
        let digest = LedgerDigest::decode_from(r)?;
        let n = r.count(16)?;
        let mut writes = Vec::with_capacity(n);
        for _ in 0..n {
            writes.push(PromisedWrite {
                key: r.vec()?,
                value: r.vec()?,
                block_no: r.u64()?,
            });
        }
        Ok(Promise { tid, writes, digest })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> ClientKey {
        ClientKey::from_seed([9; 32])
    }

    fn tid(k: &ClientKey) -> TxnId {
        TxnId {
            client_id: k.client_id(),
            client_ts: 1,
            counter: 0,
        }
    }

    #[test]
    fn sign_round_trip() {
        let k = key();
        let t = Transaction::sign(
            &k,
            tid(&k),
            vec![(b"b".to_vec(), 3), (b"a".to_vec(), 1), (b"a".to_vec(), 2)],
            vec![(b"x".to_vec(), b"1".to_vec()), (b"x".to_vec(), b"2".to_vec())],
        );
        assert_eq!(t.read_set, vec![(b"a".to_vec(), 1), (b"b".to_vec(), 3)]);
        assert_eq!(t.value_of(b"x"), Some(&b"2"[..]));
        t.verify_signature().unwrap();
        let back = Transaction::decode(&t.encode()).unwrap();
        assert_eq!(back, t);
        back.verify_signature().unwrap();
    }

    #[test]
    fn tampering_breaks_signature() {
        let k = key();
        let mut t = Transaction::sign(&k, tid(&k), vec![], vec![(b"x".to_vec(), b"1".to_vec())]);
        t.write_set[0].1 = b"2".to_vec();
        assert!(t.verify_signature().is_err());
        let mut t = Transaction::sign(&k, tid(&k), vec![], vec![]);
        t.tid.client_id ^= 1;
        assert!(t.verify_signature().is_err());
    }
}
