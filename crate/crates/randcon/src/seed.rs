//! Deterministic seed derivation.
//!
//! All randomness in the crate flows through ChaCha8, a seedable
//! counter-based generator: given the same seed (and stream), the sequence of
//! draws is identical on every platform and under any thread count. Distinct
//! pipeline stages derive their own seeds from one master seed with
//! `derive_seed`, so adding draws to one stage never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Small, well-distributed mixer used only for seed
/// derivation, never as the draw-producing generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` for the stage named `tag`, distinguished
/// by `index`. The tag keeps unrelated stages on unrelated streams even when
/// they share an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(base);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Fresh generator for a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fresh generator on an independent stream of the same seed. Streams are
/// the cheap way to hand each parallel unit (a restart, a worker) its own
/// reproducible sequence.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: changing the derivation silently would break every
        // recorded manifest, so pin a few outputs.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(7, "dataset", 0), derive_seed(7, "dataset", 0));
        assert_ne!(derive_seed(7, "dataset", 0), derive_seed(7, "dataset", 1));
        assert_ne!(derive_seed(7, "dataset", 0), derive_seed(7, "noise", 0));
        assert_ne!(derive_seed(7, "dataset", 0), derive_seed(8, "dataset", 0));
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<f64> = rng_stream(1, 0).sample_iter(rand::distr::StandardUniform).take(8).collect();
        let b: Vec<f64> = rng_stream(1, 1).sample_iter(rand::distr::StandardUniform).take(8).collect();
        let a2: Vec<f64> = rng_stream(1, 0).sample_iter(rand::distr::StandardUniform).take(8).collect();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
