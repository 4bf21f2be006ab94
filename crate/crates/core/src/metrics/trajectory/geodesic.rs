use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Placement, Trajectory};
use crate::metrics::stats::{pearson, unit_correlation};
use crate::metrics::{input_err, Flagged, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorDistOptions {
    /// All pairs are used up to this many cells.
    pub exhaustive_limit: usize,
    /// Pairs drawn above the exhaustive limit.
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for CorDistOptions {
    fn default() -> Self {
        Self { exhaustive_limit: 300, sampled_pairs: 50_000, seed: 1 }
    }
}

/// Pearson correlation between pairwise geodesic distances of the same cell
/// pairs in both trajectories, mapped to `[0, 1]`. Flagged (0.5) when either
/// distance vector is constant.
pub fn cor_dist(
    reference: &Trajectory,
    predicted: &Trajectory,
    options: CorDistOptions,
) -> Result<Flagged<f64>> {
    let cells: Vec<&String> = reference.cells().keys().collect();
    if !cells.iter().eq(predicted.cells().keys().collect::<Vec<_>>().iter()) {
        return input_err("reference and predicted trajectories position different cells");
    }
    let n = cells.len();
    if n < 2 {
        return input_err("cor_dist needs at least two cells");
    }
    let rp: Vec<Placement> = reference.cells().values().copied().collect();
    let pp: Vec<Placement> = predicted.cells().values().copied().collect();
    let pairs: Vec<(usize, usize)> = if n <= options.exhaustive_limit {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        (0..options.sampled_pairs)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    };
    let dr: Vec<f64> = pairs.iter().map(|&(i, j)| reference.geodesic(rp[i], rp[j])).collect();
    let dp: Vec<f64> = pairs.iter().map(|&(i, j)| predicted.geodesic(pp[i], pp[j])).collect();
    Ok(match pearson(&dr, &dp) {
        Some(r) => Flagged::clean(unit_correlation(r)),
        None => Flagged::flagged(0.5, "constant geodesic distances"),
    })
}
