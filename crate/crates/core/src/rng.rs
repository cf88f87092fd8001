//! Seeded random streams. Every stochastic routine takes an explicit seed so runs are
//! reproducible bit-for-bit, including when work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream for a `(seed, a, b)` triple, e.g. `(seed, frame, joint)`.
pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b)
}

pub fn derived(seed: u64, a: u64, b: u64) -> Rng {
    seeded(mix(seed, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_differ_and_repeat() {
        let a: u64 = derived(1, 2, 3).random();
        let b: u64 = derived(1, 3, 2).random();
        assert_ne!(a, b);
        assert_eq!(a, derived(1, 2, 3).random::<u64>());
    }
}
