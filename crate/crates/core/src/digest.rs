//! Content hashes used for the frozen-weights and paired-background checks
//! and for run manifests.

use sha2::{Digest, Sha256};

/// Incremental SHA-256 over the little-endian bytes of numeric slices.
#[derive(Default, Clone)]
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update_f64s(&mut self, values: &[f64]) -> &mut Self {
        for v in values {
            self.inner.update(v.to_le_bytes());
        }
        self
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update(bytes);
        self
    }

    pub fn update_u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.inner.finalize())
    }
}

pub fn hash_f64s(values: &[f64]) -> String {
    let mut h = ContentHasher::new();
    h.update_f64s(values);
    h.finish_hex()
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SplitMix64 finalizer; used to derive independent stream seeds from a base seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream))
}
