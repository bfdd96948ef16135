//! Seeded random substreams.
//!
//! Each draw site gets its own ChaCha8 generator keyed by `(seed, stream,
//! index)`, so changing how many numbers one stream consumes never shifts
//! another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialPositions,
    Mobility,
    Fading,
    DataSizes,
    Knowledge,
    Warmup,
    Rounding,
    Instances,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::InitialPositions => 0x1001,
            Stream::Mobility => 0x1002,
            Stream::Fading => 0x1003,
            Stream::DataSizes => 0x1004,
            Stream::Knowledge => 0x1005,
            Stream::Warmup => 0x1006,
            Stream::Rounding => 0x1007,
            Stream::Instances => 0x1008,
        }
    }
}

/// Generator for `stream` at position `index` (usually the slot or frame).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.tag().to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"taco-rng");
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw on `[low, high]` that returns `low` exactly for a collapsed range.
pub fn uniform_in<R: rand::Rng>(rng: &mut R, low: f64, high: f64) -> f64 {
    let u: f64 = rng.random();
    if high > low {
        low + (high - low) * u
    } else {
        low
    }
}
