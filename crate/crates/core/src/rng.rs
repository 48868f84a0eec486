//! Seeded random streams.
//!
//! Every random draw in a run comes from a `ChaCha8Rng` whose seed is derived
//! from the single run seed by [`derive_seed`], so a run is reproducible from
//! `(config, seed)` alone and independent streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Server = 1,
    Client = 2,
    Init = 3,
    Partition = 4,
    Data = 5,
    Replicate = 6,
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `seed` with a stream tag and an id (client or replicate index).
///
/// `splitmix64(seed ^ splitmix64(stream << 32 ^ id))`.
pub fn derive_seed(seed: u64, stream: Stream, id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(((stream as u64) << 32) ^ id))
}

pub fn stream(seed: u64, stream: Stream, id: u64) -> SimRng {
    seeded(derive_seed(seed, stream, id))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
