//! Seed derivation for independent deterministic RNG streams.

/// SplitMix64 finalizer (public-domain constants). Bijective, so distinct
/// inputs never collide.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for sub-stream `stream` of `base`. Used so that folds,
/// repeats, and restarts each get an independent stream instead of sharing
/// one mutable RNG.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}
