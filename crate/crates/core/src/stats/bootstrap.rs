//! Seeded case-level resampling. Iteration `i` draws from its own ChaCha
//! stream, so results do not depend on thread count or scheduling.

use crate::stats::descriptive::percentile_sorted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Indices of one resample with replacement.
pub fn resample_indices(n: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let mut rng = iteration_rng(seed, iteration);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Runs `stat` on `iterations` resamples (in parallel) and returns the
/// per-iteration results in iteration order.
pub fn replicate<T: Send>(n: usize, iterations: usize, seed: u64, stat: impl Fn(&[usize]) -> T + Sync) -> Vec<T> {
    (0..iterations)
        .into_par_iter()
        .map(|i| stat(&resample_indices(n, seed, i as u64)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "crate::numfmt::real")]
    pub lo: f64,
    #[serde(with = "crate::numfmt::real")]
    pub hi: f64,
}

/// 2.5th and 97.5th percentiles of the finite values, `None` if there are none.
pub fn percentile_interval(values: impl IntoIterator<Item = f64>) -> Option<Interval> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(f64::total_cmp);
    Some(Interval { lo: percentile_sorted(&v, 2.5), hi: percentile_sorted(&v, 97.5) })
}
