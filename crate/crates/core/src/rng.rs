//! The single portable PRNG used everywhere in the crate.
//!
//! ChaCha20 seeded through `SeedableRng::seed_from_u64`, whose output is
//! specified independently of platform and word size. Sub-streams (one per
//! image, one per projection row, ...) are derived as `seed ^ index`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type PortableRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> PortableRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream
}

pub fn stream_rng(seed: u64, stream: u64) -> PortableRng {
    rng_from_seed(derive_seed(seed, stream))
}
