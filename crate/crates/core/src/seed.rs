//! Seed fan-out.
//!
//! A master seed is expanded into independent subsystem seeds with the
//! splitmix64 finalizer: `derive(master, stream) = splitmix64(master ^ splitmix64(stream))`.
//! Streams are identified by small constants (see [`Stream`]) optionally mixed
//! with a client id and round index, so every subsystem can be reproduced on
//! its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named rng streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Roles = 2,
    Init = 3,
    Participation = 4,
    LocalTraining = 5,
    Attack = 6,
    Agent = 7,
    Exploration = 8,
    Replay = 9,
    Validation = 10,
}

pub fn derive(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ splitmix64(stream as u64))
}

/// Seed for a per-(client, round) stream, e.g. local SGD shuffling.
pub fn derive_client_round(master: u64, stream: Stream, client: usize, round: usize) -> u64 {
    let base = derive(master, stream);
    splitmix64(base ^ splitmix64(((client as u64) << 32) ^ round as u64))
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream) -> SimRng {
    rng(derive(master, stream))
}
