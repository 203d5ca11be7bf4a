//! Seed derivation.
//!
//! Every random stream in a run is derived from one master seed through a
//! fixed `(iteration, stage, index)` counter, so results never depend on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Init = 1,
    Evaluate = 2,
    Predictor = 3,
    Select = 4,
    Train = 5,
    Rollout = 6,
    Matrix = 7,
    Reweight = 8,
    Individualize = 9,
    Generate = 10,
    Test = 11,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, iteration: u64, stage: Stage, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ iteration.wrapping_mul(0x0100_0000_01b3));
    h = splitmix64(h ^ (stage as u64).wrapping_mul(0xff51_afd7_ed55_8ccd));
    splitmix64(h ^ index)
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, iteration: u64, stage: Stage, index: u64) -> SimRng {
    rng_from(child_seed(master, iteration, stage, index))
}
