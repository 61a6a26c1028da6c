//! The one pseudo-random generator used throughout the crate.
//!
//! Every random draw (split permutation, weight init, dropout masks,
//! synthetic data) comes from [`Rng`], a xoshiro256++ generator. Seeding
//! goes through SplitMix64 (`rand_xoshiro`'s `seed_from_u64`), so a `u64`
//! seed fixes the whole stream on every platform.
//!
//! Independent consumers never share a generator. They derive their own
//! stream with [`stream`], which hashes `(seed, tag, index)` through the
//! SplitMix64 finalizer before seeding.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Stream tags. Each consumer of randomness owns one.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49_5400_0001;
    pub const INIT: u64 = 0x494e_4954_0000_0002;
    pub const DROPOUT: u64 = 0x4452_4f50_0000_0003;
    pub const SYNTH_TRUTH: u64 = 0x5452_5554_4800_0004;
    pub const SYNTH_SAMPLE: u64 = 0x5341_4d50_4c45_0005;
    pub const SYNTH_IMAGE: u64 = 0x494d_4147_4500_0006;
    pub const BENCH: u64 = 0x4245_4e43_4800_0007;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator seeded directly from `seed`.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent generator for consumer `tag`, item `index`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let mixed = splitmix64(splitmix64(seed ^ tag).wrapping_add(index));
    Rng::seed_from_u64(mixed)
}

/// Uniform integer in `0..bound` by Lemire's multiply-shift with rejection.
///
/// Draws `r = next_u64()`, forms the 128-bit product `r * bound` and keeps the
/// high word unless the low word falls in the biased zone `< 2^64 mod bound`,
/// in which case it redraws.
pub fn uniform_below(rng: &mut Rng, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below needs a positive bound");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = (rng.next_u64() as u128) * (bound as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// Uniform `f64` in `[0, 1)` from the top 53 bits of one draw.
pub fn uniform_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// In-place Fisher–Yates: for `i` from `len-1` down to 1, swap `i` with
/// `uniform_below(i + 1)`.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
