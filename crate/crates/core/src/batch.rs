//! Deterministic per-trial randomness and the trial-level map used by every batch experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for trial `index` of a batch seeded by `master`.
///
/// Each trial gets its own ChaCha stream, so results do not depend on
/// scheduling or worker count.
pub fn trial_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derive a child seed from a parent seed and a label, for nested constructions.
pub fn child_seed(parent: u64, label: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = parent ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn map_trials_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_trials_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over trial indices `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the trial index.
pub fn map_trials<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_trials_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_trials_sequential(n, f)
    }
}
