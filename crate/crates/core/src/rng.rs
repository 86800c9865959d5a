//! Seeded random streams.
//!
//! Every stochastic unit (a kernel unit, a Monte Carlo batch, an injected
//! tensor) draws from its own ChaCha stream keyed by `(seed, index)`, so the
//! numbers a unit sees never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent stream `index` under the global `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a sub-seed for a named experiment so that two experiments sharing
/// a global seed do not share streams.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trials per Monte Carlo work item. Part of the reproducibility contract:
/// changing it changes which stream each trial draws from.
pub const MC_BATCH: u64 = 16_384;

/// Runs `trials` Bernoulli-style trials in fixed-size batches, one stream per
/// batch, and sums the per-batch counts. `f(rng, n)` must run `n` trials and
/// return how many of them hit. The result is independent of thread count.
pub fn batched_count<F>(trials: u64, seed: u64, f: F) -> u64
where
    F: Fn(&mut SimRng, u64) -> u64 + Sync,
{
    use rayon::prelude::*;
    let batches = trials.div_ceil(MC_BATCH);
    (0..batches)
        .into_par_iter()
        .map(|b| {
            let n = MC_BATCH.min(trials - b * MC_BATCH);
            let mut rng = stream(seed, b);
            f(&mut rng, n)
        })
        .sum()
}
