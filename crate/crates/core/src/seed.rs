//! Stable seed derivation. Every random stream in the crate is keyed by a
//! seed computed here, so results never depend on execution order.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; stable across platforms and releases.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_str(s: &str) -> u64 {
    hash_bytes(s.as_bytes())
}

/// Child seed for a labelled sub-stream.
pub fn derive(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(hash_str(label)))
}

/// Child seed for the `index`-th member of a labelled family.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(derive(seed, label) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
