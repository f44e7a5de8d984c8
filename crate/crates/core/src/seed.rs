//! 64-bit seed derivation.
//!
//! Every random stream in a run is keyed by a master seed and a short tuple of
//! indices, so results never depend on scheduling order.

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `keys` into `master` one at a time: `s ← splitmix64(s ⊕ splitmix64(k))`.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |s, &k| splitmix64(s ^ splitmix64(k)))
}
