//! Seeded random streams.
//!
//! Every stochastic draw in a scenario comes from a ChaCha stream keyed by the
//! scenario seed and a fixed stream id, so changing one consumer (say, the
//! fleet size used for initial placement) never perturbs another (the
//! synthetic demand).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Demand = 1,
    Density = 2,
    Siting = 3,
    Placement = 4,
    Dispatch = 5,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
