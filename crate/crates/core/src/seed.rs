//! Deterministic sub-seed derivation from a single root seed.

/// One SplitMix64 step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `label` under `root`. Distinct labels give unrelated seeds.
pub fn derive(root: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix64(root), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Sub-seed for the `index`-th item of stream `label`.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(root, label) ^ splitmix64(index))
}
