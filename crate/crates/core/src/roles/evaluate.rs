//! Trial selection: metric tables, ranked plots, annotation consensus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{extract_json, RoleError, Roles, RETRY_NOTE};
use crate::config::{AnnotationJudge, EvaluationMode};
use crate::gateway::{CallKey, ChatMessage, ImagePayload, RoleKind};
use crate::metrics::{batch_overall, io as metric_io, lookup_metric, trajectory_overall, BatchWeights};
use crate::task::Subtask;

/// Files left behind by one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialArtifacts {
    pub trial: u32,
    /// Whether the trial's final attempt ran without error.
    pub ok: bool,
    /// Absolute paths of the trial's artifact snapshot.
    pub files: Vec<PathBuf>,
    /// Short label, e.g. the tool the trial used.
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub weights: BatchWeights,
    pub judge: AnnotationJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub method: EvaluationMode,
    /// Aligned with the trials passed in; `None` when a trial was not scored.
    pub scores: Vec<Option<f64>>,
    pub chosen_trial: u32,
    pub rationale: String,
    /// Cluster → consensus label, for aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<BTreeMap<String, String>>,
}

/// Labels for every cluster plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consensus {
    pub labels: BTreeMap<String, String>,
    pub judge: AnnotationJudge,
}

fn file_named<'f>(files: &'f [PathBuf], suffix: &str) -> Option<&'f PathBuf> {
    let mut matches: Vec<&PathBuf> = files
        .iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.to_ascii_lowercase().ends_with(suffix)))
        .collect();
    matches.sort();
    matches.into_iter().next()
}

fn image_type(p: &Path) -> Option<&'static str> {
    match p.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "png" => Some("image/png"),
        "jpg" | "jpeg" => Some("image/jpeg"),
        "gif" => Some("image/gif"),
        "webp" => Some("image/webp"),
        _ => None,
    }
}

/// Overall score from a trial's metrics table: an explicit `overall` row,
/// else the batch or trajectory aggregate when all its metrics are present.
fn metrics_score(path: &Path, weights: BatchWeights) -> Result<f64, String> {
    let values = metric_io::read_named_values(path).map_err(|e| e.to_string())?;
    if let Some(v) = lookup_metric(&values, "overall") {
        return if v.is_finite() { Ok(v) } else { Err("overall is not finite".into()) };
    }
    batch_overall(&values, weights)
        .or_else(|_| trajectory_overall(&values))
        .map_err(|e| format!("{}: no overall row and no complete metric group ({e})", path.display()))
}

/// Index of the best score; ties go to the earliest trial.
fn argmax(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn label_key(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Most frequent label per cluster; ties go to the lexicographically
/// smallest label. Votes are grouped ignoring case and surrounding space.
pub fn plurality_consensus(per_annotator: &[BTreeMap<String, String>]) -> BTreeMap<String, String> {
    let mut clusters: Vec<&String> = per_annotator.iter().flat_map(|m| m.keys()).collect();
    clusters.sort();
    clusters.dedup();
    let mut out = BTreeMap::new();
    for c in clusters {
        let mut tally: Vec<(String, String, usize)> = Vec::new();
        for m in per_annotator {
            if let Some(l) = m.get(c) {
                let k = label_key(l);
                match tally.iter_mut().find(|(key, _, _)| *key == k) {
                    Some(t) => t.2 += 1,
                    None => tally.push((k, l.trim().to_string(), 1)),
                }
            }
        }
        let best = tally
            .iter()
            .min_by(|a, b| b.2.cmp(&a.2).then_with(|| a.1.cmp(&b.1)))
            .expect("cluster has a label");
        out.insert(c.clone(), best.1.clone());
    }
    out
}

fn consensus_prompt(names: &[String], per_annotator: &[BTreeMap<String, String>]) -> String {
    let mut clusters: Vec<&String> = per_annotator.iter().flat_map(|m| m.keys()).collect();
    clusters.sort();
    clusters.dedup();
    let mut out = String::from(
        "Several annotators labelled the same clusters. Decide one consensus cell type per cluster.\n\n",
    );
    for c in &clusters {
        out.push_str(&format!("cluster {c}:\n"));
        for (name, m) in names.iter().zip(per_annotator) {
            out.push_str(&format!("  {name}: {}\n", m.get(*c).map_or("(no label)", String::as_str)));
        }
    }
    out.push_str("\nReply with JSON only: {\"labels\": {\"<cluster>\": \"<cell type>\", ...}} covering every cluster.");
    out
}

fn parse_consensus(reply: &str, clusters: &[&String]) -> Result<BTreeMap<String, String>, String> {
    let v = extract_json(reply)?;
    let obj = match v.get("labels") {
        Some(Value::Object(o)) => o,
        _ => return Err("expected {\"labels\": {...}}".into()),
    };
    let mut out = BTreeMap::new();
    for c in clusters {
        match obj.get(c.as_str()).and_then(Value::as_str) {
            Some(l) if !l.trim().is_empty() => {
                out.insert((*c).clone(), l.trim().to_string());
            }
            _ => return Err(format!("no label for cluster {c}")),
        }
    }
    Ok(out)
}

/// Merges per-cluster labels from several annotators into one label per
/// cluster, by plurality or by asking the evaluator role. A single annotator
/// is its own consensus.
pub fn aggregate_annotations(
    roles: &Roles,
    subtask: &Subtask,
    requirements: &str,
    names: &[String],
    per_annotator: &[BTreeMap<String, String>],
    judge: AnnotationJudge,
) -> Result<Consensus, RoleError> {
    if per_annotator.is_empty() {
        return Err(RoleError::Evaluation("no annotations to aggregate".into()));
    }
    if judge == AnnotationJudge::Plurality || per_annotator.len() == 1 {
        return Ok(Consensus { labels: plurality_consensus(per_annotator), judge: AnnotationJudge::Plurality });
    }
    let mut clusters: Vec<&String> = per_annotator.iter().flat_map(|m| m.keys()).collect();
    clusters.sort();
    clusters.dedup();
    let system = roles.evaluator_system(subtask, requirements)?;
    let messages = vec![ChatMessage::system(system), ChatMessage::user(consensus_prompt(names, per_annotator))];
    let (labels, _) = roles
        .ask(CallKey::new(RoleKind::Evaluator, subtask.id, 0), messages, |r| parse_consensus(r, &clusters))
        .map_err(|e| e.unwrap_or_else(RoleError::Evaluation))?;
    Ok(Consensus { labels, judge: AnnotationJudge::Llm })
}

fn parse_ranking(reply: &str, n: usize) -> Result<Vec<usize>, String> {
    let v = extract_json(reply)?;
    let list = match &v {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("ranking") {
            Some(Value::Array(a)) => a,
            _ => return Err("expected {\"ranking\": [...]}".into()),
        },
        _ => return Err("expected a ranking list".into()),
    };
    let mut out = Vec::new();
    for x in list {
        let i = x.as_u64().ok_or_else(|| format!("ranking entry {x} is not an image number"))? as usize;
        if i == 0 || i > n {
            return Err(format!("image number {i} is out of range 1..={n}"));
        }
        if out.contains(&(i - 1)) {
            return Err(format!("image {i} is ranked twice"));
        }
        out.push(i - 1);
    }
    if out.is_empty() {
        return Err("the ranking is empty".into());
    }
    Ok(out)
}

impl<'a> Roles<'a> {
    /// Picks the best of `trials` with the given method.
    pub fn evaluate(
        &self,
        subtask: &Subtask,
        trials: &[TrialArtifacts],
        requirements: &str,
        mode: EvaluationMode,
        settings: EvalSettings,
    ) -> Result<Evaluation, RoleError> {
        let ok: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].ok).collect();
        let Some(&first_ok) = ok.first() else {
            return Err(RoleError::Evaluation("no trial finished without error".into()));
        };
        let mut scores = vec![None; trials.len()];
        let single = |rationale: &str, scores: Vec<Option<f64>>| Evaluation {
            method: mode,
            scores,
            chosen_trial: trials[first_ok].trial,
            rationale: rationale.to_string(),
            consensus: None,
        };
        match mode {
            EvaluationMode::None => Ok(single("first successful trial", scores)),
            EvaluationMode::ProgrammaticMetric => {
                let mut problems = Vec::new();
                for &i in &ok {
                    match file_named(&trials[i].files, "metrics.csv") {
                        Some(p) => match metrics_score(p, settings.weights) {
                            Ok(v) => scores[i] = Some(v),
                            Err(e) => problems.push(format!("trial {}: {e}", trials[i].trial)),
                        },
                        None => problems.push(format!("trial {}: no metrics table", trials[i].trial)),
                    }
                }
                match argmax(&scores) {
                    Some(best) => Ok(Evaluation {
                        method: mode,
                        chosen_trial: trials[best].trial,
                        rationale: format!("highest overall score {:.4}", scores[best].expect("scored")),
                        scores,
                        consensus: None,
                    }),
                    None if ok.len() == 1 => Ok(single("only successful trial; no metrics to compare", scores)),
                    None => Err(RoleError::Evaluation(format!("no trial could be scored: {}", problems.join("; ")))),
                }
            }
            EvaluationMode::VisionJudge => {
                let mut candidates: Vec<(usize, &PathBuf, &'static str)> = Vec::new();
                for &i in &ok {
                    let mut imgs: Vec<(&PathBuf, &'static str)> =
                        trials[i].files.iter().filter_map(|p| image_type(p).map(|t| (p, t))).collect();
                    imgs.sort();
                    if let Some((p, t)) = imgs.first() {
                        candidates.push((i, p, t));
                    }
                }
                match candidates.len() {
                    0 if ok.len() == 1 => return Ok(single("only successful trial; no plot to judge", scores)),
                    0 => return Err(RoleError::Evaluation("no successful trial produced a plot".into())),
                    1 => {
                        let i = candidates[0].0;
                        scores[i] = Some(1.0);
                        return Ok(Evaluation {
                            method: mode,
                            scores,
                            chosen_trial: trials[i].trial,
                            rationale: "only trial with a plot".into(),
                            consensus: None,
                        });
                    }
                    _ => {}
                }
                let mut images = Vec::new();
                for (_, p, t) in &candidates {
                    let bytes = std::fs::read(p)
                        .map_err(|e| RoleError::Evaluation(format!("cannot read {}: {e}", p.display())))?;
                    images.push(ImagePayload::from_bytes(*t, &bytes));
                }
                let system = self.evaluator_system(subtask, requirements)?;
                let n = candidates.len();
                let mut instruction = format!(
                    "The {n} attached images are plots from candidate solutions, image 1 first. Rank them from best \
                     to worst and give each an integer score from 1 to 10. Reply with JSON only: {{\"ranking\": [<image \
                     numbers>], \"scores\": [<score per image>], \"reason\": \"<short>\"}}."
                );
                let key = CallKey::new(RoleKind::Evaluator, subtask.id, 0);
                let mut last = String::new();
                for _ in 0..=self.max_parse_retries {
                    let reply = self.gateway.judge_images(key, &system, &instruction, &images)?;
                    match parse_ranking(&reply, n) {
                        Ok(ranking) => {
                            for (rank, &img) in ranking.iter().enumerate() {
                                scores[candidates[img].0] = Some(1.0 - rank as f64 / (n - 1) as f64);
                            }
                            let best = candidates[ranking[0]].0;
                            let reason = extract_json(&reply)
                                .ok()
                                .and_then(|v| v.get("reason").and_then(Value::as_str).map(str::to_string))
                                .unwrap_or_default();
                            return Ok(Evaluation {
                                method: mode,
                                scores,
                                chosen_trial: trials[best].trial,
                                rationale: if reason.is_empty() { "ranked first by the judge".into() } else { reason },
                                consensus: None,
                            });
                        }
                        Err(e) => {
                            instruction.push_str(&format!("\n{RETRY_NOTE}: {e}."));
                            last = e;
                        }
                    }
                }
                Err(RoleError::Evaluation(format!("no usable ranking: {last}")))
            }
            EvaluationMode::Aggregation => {
                let mut used = Vec::new();
                let mut names = Vec::new();
                let mut tables = Vec::new();
                for &i in &ok {
                    let Some(p) = file_named(&trials[i].files, "annotations.csv") else { continue };
                    let labels = metric_io::read_labels(p).map_err(|e| RoleError::Evaluation(e.to_string()))?;
                    used.push(i);
                    names.push(if trials[i].label.is_empty() {
                        format!("trial {}", trials[i].trial)
                    } else {
                        trials[i].label.clone()
                    });
                    tables.push(labels);
                }
                if tables.is_empty() {
                    return if ok.len() == 1 {
                        Ok(single("only successful trial; no annotations to aggregate", scores))
                    } else {
                        Err(RoleError::Evaluation("no successful trial wrote an annotation table".into()))
                    };
                }
                let consensus = aggregate_annotations(self, subtask, requirements, &names, &tables, settings.judge)?;
                for (&i, t) in used.iter().zip(&tables) {
                    let agree =
                        consensus.labels.iter().filter(|(c, l)| t.get(*c).is_some_and(|x| label_key(x) == label_key(l))).count();
                    scores[i] = Some(agree as f64 / consensus.labels.len().max(1) as f64);
                }
                let best = argmax(&scores).expect("at least one table scored");
                Ok(Evaluation {
                    method: mode,
                    chosen_trial: trials[best].trial,
                    rationale: format!(
                        "{} consensus over {} annotators; chosen trial agrees on {:.0}% of clusters",
                        match consensus.judge {
                            AnnotationJudge::Llm => "judged",
                            AnnotationJudge::Plurality => "plurality",
                        },
                        tables.len(),
                        scores[best].expect("scored") * 100.0
                    ),
                    scores,
                    consensus: Some(consensus.labels),
                })
            }
        }
    }
}
