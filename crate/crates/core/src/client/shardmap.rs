use crate::hash::Hash;

/// Assigns keys to shards: the first 8 bytes of the key's hash, read
/// big-endian, modulo the shard count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardMap {
    shards: u32,
}

impl ShardMap {
    pub fn new(shards: u32) -> ShardMap {
        assert!(shards > 0, "at least one shard");
        ShardMap { shards }
    }

    pub fn shards(&self) -> u32 {
        self.shards
    }

    pub fn shard_of(&self, key: &[u8]) -> u32 {
        let h = Hash::of(key);
        (u64::from_be_bytes(h.0[..8].try_into().unwrap()) % self.shards as u64) as u32
    }
}
