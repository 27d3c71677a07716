//! Seed derivation for independent, reproducible random streams.
//!
//! Every `(master seed, replication, title, purpose)` tuple maps to its own
//! ChaCha8 stream, so results do not depend on scheduling, and policies
//! that differ only in reserves or fulfillment see the same arrivals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Reserves = 2,
    Decisions = 3,
    Scenario = 4,
    Search = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, replication: u64, title: u64, stream: Stream) -> [u8; 32] {
    let mut state = splitmix64(master);
    let mut seed = [0u8; 32];
    for (k, part) in [replication, title, stream as u64, 0].into_iter().enumerate() {
        state = splitmix64(state ^ part.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ k as u64);
        seed[8 * k..8 * k + 8].copy_from_slice(&state.to_le_bytes());
    }
    seed
}

pub fn stream(master: u64, replication: u64, title: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, replication, title, stream))
}
