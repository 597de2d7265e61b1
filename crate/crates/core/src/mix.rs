//! Counter-mode hashing used wherever a value must depend on `(seed, id)`
//! rather than on draw order.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn hash3(seed: u64, stream: u64, id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ id)
}

/// Uniform value in the open interval (0, 1).
#[inline]
pub fn unit_open(seed: u64, stream: u64, id: u64) -> f64 {
    let bits = hash3(seed, stream, id) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

pub mod streams {
    pub const LLM_NOISE: u64 = 0x4c4c_4d5f_6e6f_6973;
    pub const HUMAN_FLIP: u64 = 0x6875_6d61_6e5f_666c;
    pub const VALIDATION: u64 = 0x7661_6c5f_7370_6c74;
    pub const TEST_SPLIT: u64 = 0x7465_7374_5f73_706c;
    pub const NOISE_INJECT: u64 = 0x6e6f_6973_655f_696e;
}
