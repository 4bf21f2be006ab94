use std::collections::BTreeMap;

use super::Trajectory;
use crate::metrics::stats::{pearson, unit_correlation, weighted_pearson};
use crate::metrics::{input_err, Result};

/// Cells × features expression values keyed by cell id.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub features: Vec<String>,
    pub cells: BTreeMap<String, Vec<f64>>,
}

/// Per-feature importance: absolute Pearson correlation of expression with
/// pseudotime (geodesic distance from `root`). Constant features score 0.
pub fn feature_importance(
    matrix: &ExpressionMatrix,
    trajectory: &Trajectory,
    root: &str,
) -> Result<BTreeMap<String, f64>> {
    let Some(root) = trajectory.milestone_index(root) else {
        return input_err(format!("unknown root milestone {root}"));
    };
    let time = trajectory.pseudotime(root);
    let mut t = Vec::with_capacity(time.len());
    let mut rows = Vec::with_capacity(time.len());
    for (cell, &pt) in &time {
        let Some(row) = matrix.cells.get(cell) else {
            return input_err(format!("cell {cell} has no expression values"));
        };
        if row.len() != matrix.features.len() {
            return input_err(format!("cell {cell} has {} values, expected {}", row.len(), matrix.features.len()));
        }
        t.push(pt);
        rows.push(row);
    }
    if t.len() < 3 {
        return input_err("feature importance needs at least three positioned cells");
    }
    Ok(matrix
        .features
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let x: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            (name.clone(), pearson(&x, &t).map_or(0.0, f64::abs))
        })
        .collect())
}

/// Predicted-trajectory root whose importance vector agrees best with the
/// reference; ties go to the first milestone in name order.
pub fn match_root(
    matrix: &ExpressionMatrix,
    predicted: &Trajectory,
    reference_importance: &BTreeMap<String, f64>,
) -> Result<(String, BTreeMap<String, f64>)> {
    let mut best: Option<(f64, String, BTreeMap<String, f64>)> = None;
    for root in predicted.milestones() {
        let imp = feature_importance(matrix, predicted, root)?;
        let score = cor_features(reference_importance, &imp)?;
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, root.clone(), imp));
        }
    }
    best.map(|(_, r, i)| (r, i)).ok_or_else(|| crate::metrics::MetricError::Input("no milestones".into()))
}

fn shared(
    reference: &BTreeMap<String, f64>,
    predicted: &BTreeMap<String, f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (f, &v) in reference {
        if let Some(&p) = predicted.get(f) {
            x.push(v);
            y.push(p);
        }
    }
    if x.len() < 3 {
        return input_err(format!("only {} shared features, need at least 3", x.len()));
    }
    Ok((x, y))
}

fn map_or_degenerate(r: Option<f64>, x: &[f64], y: &[f64]) -> f64 {
    match r {
        Some(r) => unit_correlation(r),
        None if x == y => 1.0,
        None => 0.5,
    }
}

/// Pearson correlation of the two importance vectors over shared features,
/// mapped to `[0, 1]`.
pub fn cor_features(reference: &BTreeMap<String, f64>, predicted: &BTreeMap<String, f64>) -> Result<f64> {
    let (x, y) = shared(reference, predicted)?;
    Ok(map_or_degenerate(pearson(&x, &y), &x, &y))
}

/// Like [`cor_features`] but each feature is weighted by the rank of its
/// reference importance (least important gets weight 1).
pub fn wcor_features(reference: &BTreeMap<String, f64>, predicted: &BTreeMap<String, f64>) -> Result<f64> {
    let (x, y) = shared(reference, predicted)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut w = vec![0.0; x.len()];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = (rank + 1) as f64;
    }
    Ok(map_or_degenerate(weighted_pearson(&x, &y, &w), &x, &y))
}
