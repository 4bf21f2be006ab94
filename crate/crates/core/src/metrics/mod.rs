//! Evaluation metrics for annotation, batch integration and trajectory
//! inference.
//!
//! All functions are pure. Inputs are validated eagerly and rejected with
//! [`MetricError`] rather than producing NaN.

mod aggregate;
mod annotation;
mod graph;
pub mod io;
mod partition;
mod pcr;
mod silhouette;
mod stats;
pub mod trajectory;
mod types;

pub use aggregate::{
    batch_overall, score_batch, trajectory_overall, BatchInputs, BatchWeights, MetricReport,
    BATCH_REMOVAL_METRICS, BIO_CONSERVATION_METRICS, TRAJECTORY_METRICS,
};
pub(crate) use aggregate::lookup as lookup_metric;
pub use annotation::{annotation_accuracy, annotation_match_score, MatchClass};
pub use graph::{graph_connectivity, kbet, knn_graph, lisi, LisiFlavor, KBET_ALPHA};
pub use partition::{ari, nmi};
pub use pcr::{batch_variance, pcr_comparison};
pub use silhouette::{asw, isolated_label_score, silhouette_samples, AswFlavor};
pub use stats::{pearson, weighted_pearson};
pub use types::{Embedding, Flagged, LabelVector, NeighborGraph};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("invalid metric input: {0}")]
    Input(String),
    #[error("missing metric input: {0}")]
    Missing(String),
    #[error("edgeflip search supports at most {limit} milestones, got {got}")]
    EdgeflipScale { limit: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MetricError::Input(msg.into()))
}
