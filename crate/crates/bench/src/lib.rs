//! Seeded synthetic inputs shared by the benchmarks.

use cellpilot_core::metrics::{Embedding, LabelVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` cells in `d` dimensions drawn around `k` cluster centres, with cluster
/// labels and an alternating two-batch assignment.
pub fn clustered(n: usize, d: usize, k: usize, seed: u64) -> (Embedding, LabelVector, LabelVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    let mut batches = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        rows.push(centres[c].iter().map(|x| x + rng.random_range(-1.0..1.0)).collect());
        types.push(format!("type{c}"));
        batches.push(if rng.random_bool(0.5) { "b1" } else { "b2" }.to_string());
    }
    (Embedding::from_rows(&rows).expect("finite rows"), LabelVector::new(types), LabelVector::new(batches))
}

/// Two random labelings of `n` cells over `k` labels.
pub fn label_pair(n: usize, k: usize, seed: u64) -> (LabelVector, LabelVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    (LabelVector::from_codes(&a), LabelVector::from_codes(&b))
}
