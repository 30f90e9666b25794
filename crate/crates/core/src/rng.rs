//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream. The 256-bit
//! key is the little-endian bytes of the user seed followed by 24 zero bytes,
//! and the 64-bit ChaCha stream id is `(domain << 48) | index`. ChaCha is a
//! counter-based generator, so a (seed, domain, index) triple names the same
//! sequence on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream domains. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    NetInit = 1,
    InputZ = 2,
    Perturb = 3,
    Noise = 4,
    Mask = 5,
    Mixture = 6,
    Sampling = 7,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((domain as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}
