//! Deterministic seed derivation. Every random stream in a run is keyed by
//! the master seed plus a path of tags, so per-step and per-candidate
//! streams are independent of scheduling order.

pub const DATA: u64 = 1;
pub const STREAM: u64 = 2;
pub const INIT: u64 = 3;
pub const CONTROLLER: u64 = 4;
pub const STEP: u64 = 5;

/// Sub-streams within one time step.
pub const OUTPUT_GROWTH: u64 = 10;
pub const PRE_SEARCH_TRAIN: u64 = 11;
pub const CANDIDATE: u64 = 12;
pub const FINAL_TRAIN: u64 = 13;
pub const ACTION: u64 = 14;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, tag| splitmix64(acc ^ splitmix64(*tag)))
}
