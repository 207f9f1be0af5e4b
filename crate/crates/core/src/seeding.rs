//! Deterministic seed derivation. Every random stream in a run is keyed off
//! the single root seed by `(stream id, index)` through SplitMix64, so
//! results never depend on evaluation order or thread scheduling.

/// Named stream identifiers.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const INITIAL_DESIGN: u64 = 2;
    pub const MC_CACHE: u64 = 3;
    pub const ACQUISITION: u64 = 4;
    pub const HYPER_OPT: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const RANDOM_BATCH: u64 = 7;
    pub const SENSITIVITY: u64 = 8;
}

/// SplitMix64 finalizer over the combined words.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    let mut x = root
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}
