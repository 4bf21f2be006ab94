//! User request, plan and subtask types.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RequestError {
    #[error("task text is empty")]
    EmptyTask,
    #[error("dataset {0} is not a readable file")]
    UnreadableData(PathBuf),
}

/// What the user asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub data_path: PathBuf,
    pub task_text: String,
    #[serde(default)]
    pub requirements: Option<String>,
    #[serde(default)]
    pub data_description: Option<String>,
}

impl TaskRequest {
    pub fn new(data_path: impl Into<PathBuf>, task_text: impl Into<String>) -> Self {
        Self {
            data_path: data_path.into(),
            task_text: task_text.into(),
            requirements: None,
            data_description: None,
        }
    }

    pub fn with_requirements(mut self, req: impl Into<String>) -> Self {
        self.requirements = Some(req.into());
        self
    }

    pub fn with_data_description(mut self, desc: impl Into<String>) -> Self {
        self.data_description = Some(desc.into());
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.task_text.trim().is_empty() {
            return Err(RequestError::EmptyTask);
        }
        if std::fs::File::open(&self.data_path).is_err() || !self.data_path.is_file() {
            return Err(RequestError::UnreadableData(self.data_path.clone()));
        }
        Ok(())
    }
}

/// Category of a subtask; selects the iteration policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    Preprocess,
    BatchCorrection,
    CellAnnotation,
    TrajectoryInference,
    Visualization,
    Other,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 6] = [
        Self::Preprocess,
        Self::BatchCorrection,
        Self::CellAnnotation,
        Self::TrajectoryInference,
        Self::Visualization,
        Self::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Preprocess => "preprocess",
            Self::BatchCorrection => "batch_correction",
            Self::CellAnnotation => "cell_annotation",
            Self::TrajectoryInference => "trajectory_inference",
            Self::Visualization => "visualization",
            Self::Other => "other",
        }
    }

    /// Lenient parse used on planner output: unknown kinds become `Other`.
    pub fn parse_lenient(s: &str) -> Self {
        s.parse().unwrap_or(Self::Other)
    }
}

impl FromStr for SubtaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Ok(match norm.as_str() {
            "preprocess" | "preprocessing" | "quality_control" | "qc" => Self::Preprocess,
            "batch_correction" | "integration" | "batch_integration" => Self::BatchCorrection,
            "cell_annotation" | "cell_type_annotation" | "annotation" => Self::CellAnnotation,
            "trajectory_inference" | "trajectory" | "pseudotime" => Self::TrajectoryInference,
            "visualization" | "visualisation" | "plotting" => Self::Visualization,
            "other" => Self::Other,
            _ => return Err(format!("unknown subtask kind {s:?}")),
        })
    }
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    /// 1-based position in the plan.
    pub id: u32,
    pub title: String,
    pub description: String,
    pub kind: SubtaskKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub subtasks: Vec<Subtask>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan has no subtasks")]
    Empty,
    #[error("subtask ids must be 1..=n in order; found {found} at position {position}")]
    BadIds { position: usize, found: u32 },
    #[error("subtask {0} has an empty description")]
    EmptyDescription(u32),
}

impl Plan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.subtasks.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, s) in self.subtasks.iter().enumerate() {
            if s.id as usize != i + 1 {
                return Err(PlanError::BadIds { position: i + 1, found: s.id });
            }
            if s.description.trim().is_empty() {
                return Err(PlanError::EmptyDescription(s.id));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_maps_to_other() {
        assert_eq!(SubtaskKind::parse_lenient("clustering"), SubtaskKind::Other);
        assert_eq!(SubtaskKind::parse_lenient("Batch Correction"), SubtaskKind::BatchCorrection);
    }

    #[test]
    fn plan_ids_must_be_contiguous() {
        let st = |id| Subtask { id, title: "t".into(), description: "d".into(), kind: SubtaskKind::Other };
        assert!(Plan { subtasks: vec![st(1), st(2)], rationale: String::new() }.validate().is_ok());
        assert_eq!(
            Plan { subtasks: vec![st(1), st(3)], rationale: String::new() }.validate(),
            Err(PlanError::BadIds { position: 2, found: 3 })
        );
        assert_eq!(Plan { subtasks: vec![], rationale: String::new() }.validate(), Err(PlanError::Empty));
    }

    #[test]
    fn empty_task_rejected() {
        let r = TaskRequest::new("/nonexistent", "  ");
        assert_eq!(r.validate(), Err(RequestError::EmptyTask));
        let r = TaskRequest::new("/nonexistent", "annotate");
        assert!(matches!(r.validate(), Err(RequestError::UnreadableData(_))));
    }
}
