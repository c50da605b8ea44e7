//! Seed derivation. Every random consumer in a run gets its own ChaCha stream
//! derived from the run seed and a fixed stream label, so adding draws in one
//! place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SERVER: u64 = 2;
pub const STREAM_CLIENT_BASE: u64 = 1 << 32;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}

/// Minibatch stream of one client.
pub fn client_rng(seed: u64, client_id: usize) -> SimRng {
    stream_rng(seed, STREAM_CLIENT_BASE + client_id as u64)
}
