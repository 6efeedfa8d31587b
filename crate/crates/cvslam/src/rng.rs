//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness in a run gets its own ChaCha stream derived
//! from the master seed and a purpose tag, so results do not depend on
//! scheduling or on how many draws another consumer made.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Stream purposes. The discriminant is part of the derived seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    /// Initial particle cloud for a vehicle filter.
    InitParticles { vehicle: u64 },
    /// Measurement noise for one vehicle at one slot.
    Observation { vehicle: u64, slot: u64 },
    /// Motion-report noise for one vehicle at one slot.
    Motion { vehicle: u64, slot: u64 },
    /// Per-particle prediction noise for one vehicle at one slot.
    Predict { vehicle: u64, slot: u64 },
    /// Particle birth for a CVT filter.
    CvtInit { cluster: u64 },
    /// Batch partition for one filter at one slot.
    Batch { kind: u64, id: u64, slot: u64 },
    /// Resampling draw for one filter at one slot and iteration.
    Resample { kind: u64, id: u64, slot: u64, iter: u64 },
}

impl Stream {
    fn tags(self) -> [u64; 5] {
        match self {
            Stream::InitParticles { vehicle } => [1, vehicle, 0, 0, 0],
            Stream::Observation { vehicle, slot } => [2, vehicle, slot, 0, 0],
            Stream::Motion { vehicle, slot } => [3, vehicle, slot, 0, 0],
            Stream::Predict { vehicle, slot } => [4, vehicle, slot, 0, 0],
            Stream::CvtInit { cluster } => [5, cluster, 0, 0, 0],
            Stream::Batch { kind, id, slot } => [6, kind, id, slot, 0],
            Stream::Resample { kind, id, slot, iter } => [7, kind, id, slot, iter],
        }
    }
}

/// Derives independent ChaCha streams from one master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    master: u64,
}

impl RngFactory {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Returns the stream for `purpose`, always the same for a given factory.
    pub fn stream(&self, purpose: Stream) -> ChaCha8Rng {
        let mut state = splitmix64(self.master ^ 0x9e37_79b9_7f4a_7c15);
        for tag in purpose.tags() {
            state = splitmix64(state ^ tag);
        }
        ChaCha8Rng::seed_from_u64(state)
    }
}

/// SplitMix64 step; mixes a 64-bit value into a well-distributed one.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
