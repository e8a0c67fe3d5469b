//! Seed derivation and the project-wide RNG.
//!
//! Every randomized routine draws from [`Rng`], ChaCha with 8 rounds as
//! implemented by `rand_chacha`, whose output stream is fixed by its seed on
//! every platform. Sub-seeds are the first eight bytes (little-endian) of
//! SHA-256 over a tag and the little-endian encoding of the parts.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(master.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
