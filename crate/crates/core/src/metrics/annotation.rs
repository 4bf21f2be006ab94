use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{input_err, MetricError, Result};

/// Agreement class between a predicted and an expert cell-type label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchClass {
    FullyMatch,
    PartialMatch,
    Mismatch,
}

impl FromStr for MatchClass {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "fully_match" | "full_match" | "full" | "fully" => Ok(Self::FullyMatch),
            "partial_match" | "partially_match" | "partial" | "partially" => Ok(Self::PartialMatch),
            "mismatch" | "no_match" | "none" => Ok(Self::Mismatch),
            _ => input_err(format!("unknown match class {s:?}")),
        }
    }
}

impl fmt::Display for MatchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FullyMatch => "fully_match",
            Self::PartialMatch => "partial_match",
            Self::Mismatch => "mismatch",
        })
    }
}

pub fn annotation_match_score(class: MatchClass) -> f64 {
    match class {
        MatchClass::FullyMatch => 1.0,
        MatchClass::PartialMatch => 0.5,
        MatchClass::Mismatch => 0.0,
    }
}

/// Mean consistency score over clusters.
pub fn annotation_accuracy(classes: &[MatchClass]) -> Result<f64> {
    if classes.is_empty() {
        return input_err("annotation accuracy needs at least one cluster");
    }
    let total: f64 = classes.iter().copied().map(annotation_match_score).sum();
    Ok(total / classes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_scores() {
        assert_eq!(annotation_match_score(MatchClass::FullyMatch), 1.0);
        assert_eq!(annotation_match_score(MatchClass::PartialMatch), 0.5);
        assert_eq!(annotation_match_score(MatchClass::Mismatch), 0.0);
    }

    #[test]
    fn accuracy_edges() {
        assert_eq!(annotation_accuracy(&[MatchClass::FullyMatch; 4]).unwrap(), 1.0);
        assert_eq!(annotation_accuracy(&[MatchClass::Mismatch; 3]).unwrap(), 0.0);
        assert!(annotation_accuracy(&[]).is_err());
    }

    #[test]
    fn parses_loose_spellings() {
        assert_eq!("Partially match".parse::<MatchClass>().unwrap(), MatchClass::PartialMatch);
        assert!("maybe".parse::<MatchClass>().is_err());
    }
}
