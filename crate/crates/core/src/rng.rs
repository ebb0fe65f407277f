//! Seeded randomness for reproducible fixtures.
//!
//! All random inputs come from ChaCha8 (`rand_chacha`). A 64-bit seed is
//! expanded with `SeedableRng::seed_from_u64` (PCG32 key schedule, as
//! documented by `rand_core`) and independent streams are selected with
//! ChaCha's 64-bit stream counter, so a `(seed, stream)` pair fully
//! determines the generated sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the laboratory's generators.
pub mod streams {
    pub const MATRICES: u64 = 1;
    pub const VECTORS: u64 = 2;
    pub const FIELDS: u64 = 3;
    pub const TANGENTS: u64 = 4;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
