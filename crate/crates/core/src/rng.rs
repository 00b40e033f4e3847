//! Deterministic random streams.
//!
//! Every random draw in a training run comes from a ChaCha stream keyed by
//! `(seed, iteration, role, slot)`. A run can therefore be stopped and resumed
//! at any iteration boundary without persisting generator state, and turning
//! one component off never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a stream is used for within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Role {
    Crop = 1,
    WeakAugment = 2,
    StrongAugment = 3,
    StrongMask = 4,
    PasteMask = 5,
    Shuffle = 6,
    Init = 7,
    Phantom = 8,
    Split = 9,
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(iteration, role, slot)` under `seed`.
pub fn stream(seed: u64, iteration: u64, role: Role, slot: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 24) | ((role as u64) << 16) | u64::from(slot & 0xffff));
    rng
}
