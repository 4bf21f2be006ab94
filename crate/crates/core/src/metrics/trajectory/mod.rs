//! Trajectory comparison: topology (edgeflip), branch assignment (F1),
//! cell positions (geodesic correlation) and trajectory-associated features.

mod branches;
mod edgeflip;
mod features;
mod geodesic;
mod model;

pub use branches::{f1_branches, Assignment};
pub use edgeflip::{edgeflip, EDGEFLIP_MAX_MILESTONES};
pub use features::{cor_features, feature_importance, match_root, wcor_features, ExpressionMatrix};
pub use geodesic::{cor_dist, CorDistOptions};
pub use model::{Placement, Trajectory, TrajectoryEdge};

use std::collections::BTreeMap;

use super::{MetricReport, Result};

/// Feature-importance source for a trajectory report.
#[derive(Debug, Clone)]
pub enum FeatureSource<'a> {
    /// Precomputed importance per feature for reference and prediction.
    Importance { reference: &'a BTreeMap<String, f64>, predicted: &'a BTreeMap<String, f64> },
    /// Importance derived from expression and pseudotime; the reference root
    /// is fixed, the predicted root is searched.
    Expression { matrix: &'a ExpressionMatrix, reference_root: &'a str },
}

/// Full trajectory report: the four overall components plus F1_milestones
/// and wcor_features as extras.
pub fn score_trajectory(
    reference: &Trajectory,
    predicted: &Trajectory,
    features: FeatureSource<'_>,
    options: CorDistOptions,
) -> Result<MetricReport> {
    let mut values = BTreeMap::new();
    let mut flags = Vec::new();
    values.insert("edgeflip".to_string(), edgeflip(reference, predicted)?);
    values.insert("F1_branches".to_string(), f1_branches(reference, predicted, Assignment::Branch)?);
    let cd = cor_dist(reference, predicted, options)?;
    if let Some(f) = cd.flag {
        flags.push(format!("cor_dist: {f}"));
    }
    values.insert("cor_dist".to_string(), cd.value);
    let (ref_imp, pred_imp) = match features {
        FeatureSource::Importance { reference, predicted } => (reference.clone(), predicted.clone()),
        FeatureSource::Expression { matrix, reference_root } => {
            let ref_imp = feature_importance(matrix, reference, reference_root)?;
            let (root, pred_imp) = match_root(matrix, predicted, &ref_imp)?;
            flags.push(format!("cor_features: predicted root {root}"));
            (ref_imp, pred_imp)
        }
    };
    values.insert("cor_features".to_string(), cor_features(&ref_imp, &pred_imp)?);
    let mut report = MetricReport::from_trajectory_values(&values)?;
    report.extras.insert(
        "F1_milestones".to_string(),
        f1_branches(reference, predicted, Assignment::Milestone)?,
    );
    report.extras.insert("wcor_features".to_string(), wcor_features(&ref_imp, &pred_imp)?);
    report.flags = flags;
    report.seed = Some(options.seed);
    Ok(report)
}
