//! Seed derivation.
//!
//! Every stochastic step in the pipeline owns a seed derived from its parent
//! seed and a stable label/index, so nested loops (epochs, iterations,
//! per-image augmentation) stay reproducible no matter how the surrounding
//! code is refactored.

/// SplitMix64 finalizer; a solid 64-bit mixer with full avalanche.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a sequence of salts.
///
/// Deterministic, order-sensitive: `mix(s, &[a, b]) != mix(s, &[b, a])` in
/// general. Chaining through SplitMix64 keeps distinct salt paths decorrelated.
pub fn mix(seed: u64, salts: &[u64]) -> u64 {
    let mut z = splitmix64(seed ^ 0x6A09_E667_F3BC_C909);
    for &s in salts {
        z = splitmix64(z ^ splitmix64(s));
    }
    z
}

/// FNV-1a hash of a label, for salting seeds with human-readable stage names.
pub fn salt(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
