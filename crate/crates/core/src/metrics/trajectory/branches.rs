use std::collections::{BTreeMap, BTreeSet};

use super::{Placement, Trajectory};
use crate::metrics::{input_err, Result};

/// How cells are grouped before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    /// Dominant edge of the cell's mixture (cells sitting exactly on a
    /// milestone form a group of their own).
    Branch,
    /// Dominant milestone of the cell's mixture.
    Milestone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Group {
    Edge(usize, usize),
    Node(usize),
}

fn group_of(p: Placement, how: Assignment) -> Group {
    match (p, how) {
        (Placement::Milestone(m), _) => Group::Node(m),
        (Placement::Edge { from, to, .. }, Assignment::Branch) => Group::Edge(from.min(to), from.max(to)),
        (Placement::Edge { from, to, progress }, Assignment::Milestone) => {
            if progress > 0.5 || (progress == 0.5 && to < from) {
                Group::Node(to)
            } else {
                Group::Node(from)
            }
        }
    }
}

fn groups(t: &Trajectory, how: Assignment) -> Vec<BTreeSet<&str>> {
    let mut by: BTreeMap<Group, BTreeSet<&str>> = BTreeMap::new();
    for (cell, &p) in t.cells() {
        by.entry(group_of(p, how)).or_default().insert(cell.as_str());
    }
    by.into_values().collect()
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Harmonic mean of recovery (mean over reference groups of the best Jaccard
/// with any predicted group) and relevance (the same from the predicted side).
pub fn f1_branches(reference: &Trajectory, predicted: &Trajectory, how: Assignment) -> Result<f64> {
    let ref_cells: BTreeSet<&String> = reference.cells().keys().collect();
    let pred_cells: BTreeSet<&String> = predicted.cells().keys().collect();
    if ref_cells != pred_cells {
        return input_err("reference and predicted trajectories position different cells");
    }
    let (gr, gp) = (groups(reference, how), groups(predicted, how));
    if gr.is_empty() || gp.is_empty() {
        return input_err("no branch assignments to compare");
    }
    let table: Vec<Vec<f64>> = gr.iter().map(|r| gp.iter().map(|p| jaccard(r, p)).collect()).collect();
    let recovery =
        table.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum::<f64>() / gr.len() as f64;
    let relevance = (0..gp.len())
        .map(|j| table.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / gp.len() as f64;
    if recovery + relevance == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * recovery * relevance / (recovery + relevance))
}
