//! Deterministic random substreams.
//!
//! Every trial draws from its own ChaCha8 stream: the key is derived from the
//! run seed and the stream number is the trial index. Results therefore do
//! not depend on how trials are split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for sub-run `index` of a run seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Random stream of one trial.
pub fn trial_stream(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}
