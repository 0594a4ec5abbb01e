//! Seed discipline.
//!
//! Every random decision comes from a ChaCha8 stream keyed by the run seed,
//! a purpose tag and (where relevant) the epoch index: the stream id is
//! `purpose << 32 | epoch`. Changing one factor of an experiment therefore
//! never perturbs the randomness consumed by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Merge = 4,
    Synth = 5,
    LabelNoise = 6,
}

pub fn stream(seed: u64, purpose: Purpose, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | (epoch & 0xffff_ffff));
    rng
}

/// Per-sample coin flip that depends only on (seed, epoch, sample index).
pub fn sample_coin(seed: u64, epoch: u64, sample: usize, prob: f64) -> bool {
    use rand::RngCore;
    let mut rng = stream(seed, Purpose::Augment, epoch);
    rng.set_word_pos(2 * sample as u128);
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u < prob
}
