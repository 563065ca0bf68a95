//! Seed-derived random streams.
//!
//! Every consumer of randomness (weight init, shuffling, sampling) draws from
//! its own ChaCha stream keyed by `(seed, stream, index)`, so adding a consumer
//! never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Projector,
    Shuffle,
    TrainSplit,
    ValSplit,
    TestSplit,
    Pool,
    GradCheck,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x01,
            Stream::Projector => 0x02,
            Stream::Shuffle => 0x03,
            Stream::TrainSplit => 0x11,
            Stream::ValSplit => 0x12,
            Stream::TestSplit => 0x13,
            Stream::Pool => 0x14,
            Stream::GradCheck => 0x21,
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let key = mix(mix(seed) ^ stream.tag().rotate_left(32) ^ mix(index.wrapping_add(1)));
    ChaCha8Rng::seed_from_u64(key)
}
