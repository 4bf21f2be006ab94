mod common;

use std::collections::BTreeMap;

use cellpilot_core::metrics::trajectory::{cor_dist, cor_features, CorDistOptions, Trajectory};
use cellpilot_core::metrics::{
    isolated_label_score, kbet, lisi, pcr_comparison, LabelVector, LisiFlavor, NeighborGraph,
};
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Cell `i` links to the next `k` cells on a ring.
fn ring_graph(n: usize, k: usize) -> NeighborGraph {
    NeighborGraph::new((0..n).map(|i| (1..=k).map(|d| (i + d) % n).collect()).collect()).unwrap()
}

fn alternating(n: usize, names: &[&str]) -> LabelVector {
    LabelVector::new((0..n).map(|i| names[i % names.len()]))
}

#[test]
fn kbet_accepts_neighborhoods_at_global_proportions() {
    let g = ring_graph(40, 10);
    assert_eq!(kbet(&g, &alternating(40, &["b1", "b2"]), None).unwrap(), 1.0);
}

#[test]
fn kbet_rejects_separated_batches() {
    let n = 200;
    let half = n / 2;
    let neighbors = (0..n)
        .map(|i| {
            let base = if i < half { 0 } else { half };
            (1..=50).map(|d| base + (i - base + d) % half).collect()
        })
        .collect();
    let g = NeighborGraph::new(neighbors).unwrap();
    let batches = LabelVector::new((0..n).map(|i| if i < half { "b1" } else { "b2" }));
    assert!(kbet(&g, &batches, None).unwrap() < 0.05);
}

#[test]
fn kbet_ignores_batch_names() {
    let mut r = rng(5);
    let n = 60;
    let neighbors = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.shuffle(&mut r);
            others.truncate(12);
            others
        })
        .collect();
    let g = NeighborGraph::new(neighbors).unwrap();
    let codes = random_labels(&mut r, n, 3);
    let names_a = LabelVector::new(codes.iter().map(|c| ["x", "y", "z"][*c]));
    let names_b = LabelVector::new(codes.iter().map(|c| ["zz", "aa", "mm"][*c]));
    assert_eq!(kbet(&g, &names_a, None).unwrap(), kbet(&g, &names_b, None).unwrap());
}

#[test]
fn lisi_reference_values() {
    let g = ring_graph(40, 10);
    assert!((lisi(&g, &alternating(40, &["b1", "b2"]), LisiFlavor::IlisiBatch).unwrap() - 1.0).abs() < 1e-12);

    // Two rings of 20, one per batch.
    let neighbors = (0..40).map(|i| {
        let base = if i < 20 { 0 } else { 20 };
        (1..=5).map(|d| base + (i - base + d) % 20).collect()
    });
    let g = NeighborGraph::new(neighbors.collect()).unwrap();
    let batches = LabelVector::new((0..40).map(|i| if i < 20 { "b1" } else { "b2" }));
    assert_eq!(lisi(&g, &batches, LisiFlavor::IlisiBatch).unwrap(), 0.0);

    // Three pure cell-type rings.
    let neighbors = (0..30).map(|i| {
        let base = (i / 10) * 10;
        (1..=4).map(|d| base + (i - base + d) % 10).collect()
    });
    let g = NeighborGraph::new(neighbors.collect()).unwrap();
    let types = LabelVector::new((0..30).map(|i| ["t1", "t2", "t3"][i / 10]));
    assert!((lisi(&g, &types, LisiFlavor::ClisiCell).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn pcr_full_removal_scores_one() {
    let ys = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut batches = Vec::new();
    for (b, offset) in [("b1", 0.0), ("b2", 3.0)] {
        for y in ys {
            before.push(vec![offset, y]);
            after.push(vec![0.0, y]);
            batches.push(b);
        }
    }
    let v = pcr_comparison(&emb(&before), &emb(&after), &LabelVector::new(batches), None).unwrap();
    assert!((v.value - 1.0).abs() < 1e-9, "{}", v.value);
    assert!(v.flag.is_none());
}

#[test]
fn interleaved_isolated_label_scores_about_half() {
    let n = 120;
    let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
    let types = LabelVector::new((0..n).map(|i| if i % 4 == 0 { "iso" } else if i % 2 == 0 { "a" } else { "b" }));
    let batches = LabelVector::new((0..n).map(|i| if i % 4 == 0 || i % 3 == 0 { "b1" } else { "b2" }));
    let v = isolated_label_score(&emb(&points), &types, &batches).unwrap();
    assert!((v.value - 0.5).abs() <= 0.1, "{}", v.value);
}

#[test]
fn tied_isolated_labels_are_averaged() {
    let points: Vec<Vec<f64>> =
        [0.0, 0.2, 0.4, 5.0, 5.3, 9.0, 9.1, 9.2, 9.3, 12.0].iter().map(|&x| vec![x]).collect();
    let types = ["x", "x", "x", "y", "y", "r", "r", "r", "r", "r"];
    let batches = ["b1", "b1", "b1", "b2", "b2", "b1", "b2", "b1", "b2", "b1"];
    let v = isolated_label_score(&emb(&points), &LabelVector::new(types), &LabelVector::new(batches)).unwrap();
    let score = |label: &str| {
        let binary: Vec<usize> = types.iter().map(|t| usize::from(*t == label)).collect();
        let s = brute_silhouette(&points, &binary);
        (s.iter().sum::<f64>() / s.len() as f64 + 1.0) / 2.0
    };
    assert!((v.value - (score("x") + score("y")) / 2.0).abs() < 1e-12);
}

fn path_trajectory(lengths: [f64; 2], placements: &[(usize, f64)]) -> Trajectory {
    let net = vec![("A".to_string(), "B".to_string(), lengths[0]), ("B".to_string(), "C".to_string(), lengths[1])];
    let ends = [("A", "B"), ("B", "C")];
    let positions: Vec<(String, Vec<(String, f64)>)> = placements
        .iter()
        .enumerate()
        .map(|(i, &(e, p))| (format!("c{i}"), vec![(ends[e].0.to_string(), 1.0 - p), (ends[e].1.to_string(), p)]))
        .collect();
    Trajectory::new(&net, &positions).unwrap()
}

fn random_placements(seed: u64, n: usize) -> Vec<(usize, f64)> {
    let mut r = rng(seed);
    (0..n).map(|_| (r.random_range(0..2), r.random_range(0.05..0.95))).collect()
}

#[test]
fn cor_dist_is_scale_invariant() {
    let cells = random_placements(11, 80);
    let reference = path_trajectory([1.0, 1.0], &cells);
    let doubled = path_trajectory([2.0, 2.0], &cells);
    let v = cor_dist(&reference, &doubled, CorDistOptions::default()).unwrap();
    assert!((v.value - 1.0).abs() < 1e-9, "{}", v.value);
}

#[test]
fn cor_dist_of_shuffled_positions_is_about_half() {
    let cells = random_placements(12, 200);
    let mut shuffled = cells.clone();
    shuffled.shuffle(&mut rng(13));
    let v = cor_dist(&path_trajectory([1.0, 1.0], &cells), &path_trajectory([1.0, 1.0], &shuffled), CorDistOptions::default())
        .unwrap();
    assert!((v.value - 0.5).abs() <= 0.1, "{}", v.value);
}

#[test]
fn cor_features_of_random_importance_is_about_half() {
    let mut r = rng(14);
    let reference: BTreeMap<String, f64> = (0..500).map(|i| (format!("g{i}"), r.random_range(0.0..1.0))).collect();
    let predicted: BTreeMap<String, f64> = (0..500).map(|i| (format!("g{i}"), r.random_range(0.0..1.0))).collect();
    let v = cor_features(&reference, &predicted).unwrap();
    assert!((v - 0.5).abs() <= 0.1, "{v}");
}
