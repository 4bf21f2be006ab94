//! Group means and overall scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    ari, asw, graph_connectivity, isolated_label_score, kbet, knn_graph, lisi, nmi,
    pcr_comparison, AswFlavor, Embedding, LabelVector, LisiFlavor, MetricError, Result,
};

pub const BATCH_REMOVAL_METRICS: [&str; 5] =
    ["Graph_Connectivity", "PCR_Comparison", "iLISI_Graph", "kBET", "ASW_batch"];
pub const BIO_CONSERVATION_METRICS: [&str; 5] =
    ["Isolated_Labels", "ARI", "NMI", "ASW_cell", "cLISI_Graph"];
pub const TRAJECTORY_METRICS: [&str; 4] = ["edgeflip", "F1_branches", "cor_dist", "cor_features"];

/// Lowercased alphanumerics, so `iLISI_Graph`, `ilisi graph` and `ILISI-graph`
/// compare equal.
pub(crate) fn metric_key(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

pub(crate) fn lookup(values: &BTreeMap<String, f64>, name: &str) -> Option<f64> {
    let key = metric_key(name);
    values.iter().find(|(k, _)| metric_key(k) == key).map(|(_, &v)| v)
}

fn require(values: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    let v = lookup(values, name).ok_or_else(|| MetricError::Missing(name.to_string()))?;
    if !v.is_finite() {
        return Err(MetricError::Input(format!("{name} is not finite")));
    }
    Ok(v)
}

fn unit(name: &str, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(MetricError::Input(format!("{name} = {v} lies outside [0, 1]")));
    }
    Ok(v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchWeights {
    pub batch: f64,
    pub bio: f64,
}

impl Default for BatchWeights {
    fn default() -> Self {
        Self { batch: 0.4, bio: 0.6 }
    }
}

fn group_means(values: &BTreeMap<String, f64>) -> Result<(f64, f64)> {
    let batch = BATCH_REMOVAL_METRICS
        .iter()
        .map(|m| require(values, m).and_then(|v| unit(m, v)))
        .collect::<Result<Vec<_>>>()?;
    let bio = BIO_CONSERVATION_METRICS
        .iter()
        .map(|&m| {
            let v = require(values, m)?;
            unit(m, if m == "ARI" { v.max(0.0) } else { v })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mean(&batch), mean(&bio)))
}

/// Weighted mean of the batch-removal and bio-conservation group means.
/// ARI is clipped at 0 before entering its group.
pub fn batch_overall(values: &BTreeMap<String, f64>, weights: BatchWeights) -> Result<f64> {
    let (batch, bio) = group_means(values)?;
    Ok(weights.batch * batch + weights.bio * bio)
}

/// Geometric mean of edgeflip, F1_branches, cor_dist and cor_features.
pub fn trajectory_overall(values: &BTreeMap<String, f64>) -> Result<f64> {
    let parts = TRAJECTORY_METRICS
        .iter()
        .map(|m| require(values, m).and_then(|v| unit(m, v)))
        .collect::<Result<Vec<_>>>()?;
    if parts.contains(&0.0) {
        return Ok(0.0);
    }
    Ok((parts.iter().map(|v| v.ln()).sum::<f64>() / parts.len() as f64).exp())
}

/// Six decimals with trailing zeros trimmed (`0.78125`, `1.0`).
fn format_value(v: f64) -> String {
    let s = format!("{v:.6}");
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: String,
    pub per_metric: BTreeMap<String, f64>,
    /// Values reported but excluded from the overall (raw ARI, F1_milestones, ...).
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
    pub group_means: BTreeMap<String, f64>,
    pub overall: f64,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl MetricReport {
    /// Builds a batch-integration report from already computed metric values.
    pub fn from_batch_values(values: &BTreeMap<String, f64>, weights: BatchWeights) -> Result<Self> {
        let (batch, bio) = group_means(values)?;
        let mut per_metric = BTreeMap::new();
        let mut extras = BTreeMap::new();
        for m in BATCH_REMOVAL_METRICS.iter().chain(&BIO_CONSERVATION_METRICS) {
            let v = require(values, m)?;
            if *m == "ARI" {
                extras.insert("ARI_raw".to_string(), v);
                per_metric.insert(m.to_string(), v.max(0.0));
            } else {
                per_metric.insert(m.to_string(), v);
            }
        }
        Ok(Self {
            kind: "batch".into(),
            per_metric,
            extras,
            group_means: BTreeMap::from([
                ("batch_removal".to_string(), batch),
                ("bio_conservation".to_string(), bio),
            ]),
            overall: weights.batch * batch + weights.bio * bio,
            flags: Vec::new(),
            seed: None,
        })
    }

    pub fn from_trajectory_values(values: &BTreeMap<String, f64>) -> Result<Self> {
        let overall = trajectory_overall(values)?;
        let per_metric = TRAJECTORY_METRICS
            .iter()
            .map(|m| Ok((m.to_string(), require(values, m)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            kind: "trajectory".into(),
            group_means: per_metric.clone(),
            per_metric,
            extras: BTreeMap::new(),
            overall,
            flags: Vec::new(),
            seed: None,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.per_metric.iter().chain(&self.extras) {
            let _ = writeln!(out, "{k},{v}");
        }
        for (k, v) in &self.group_means {
            if !self.per_metric.contains_key(k) {
                let _ = writeln!(out, "{k},{v}");
            }
        }
        let _ = writeln!(out, "overall,{}", self.overall);
        out
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<(String, f64)> = self
            .per_metric
            .iter()
            .chain(&self.extras)
            .map(|(k, v)| (k.clone(), *v))
            .chain(
                self.group_means
                    .iter()
                    .filter(|(k, _)| !self.per_metric.contains_key(*k))
                    .map(|(k, v)| (format!("mean({k})"), *v)),
            )
            .chain(std::iter::once(("overall".to_string(), self.overall)))
            .collect();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>9}\n{}\n", "metric", "value", "-".repeat(width + 11));
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {:>9}", format_value(v));
        }
        for f in &self.flags {
            let _ = writeln!(out, "note: {f}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed: {seed}");
        }
        out
    }
}

/// Raw inputs for scoring an integration result.
#[derive(Debug, Clone, Default)]
pub struct BatchInputs {
    pub embedding: Option<Embedding>,
    /// Unintegrated representation, used by PCR comparison.
    pub embedding_before: Option<Embedding>,
    pub batches: Option<LabelVector>,
    pub cell_types: Option<LabelVector>,
    /// Clustering of the integrated embedding, compared against cell types.
    pub clusters: Option<LabelVector>,
    pub k: usize,
}

fn need<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| MetricError::Missing(name.to_string()))
}

/// Computes all ten integration metrics and the weighted overall.
pub fn score_batch(inputs: &BatchInputs, weights: BatchWeights) -> Result<MetricReport> {
    let emb = need(&inputs.embedding, "embedding")?;
    let before = need(&inputs.embedding_before, "embedding_before")?;
    let batches = need(&inputs.batches, "batch labels")?;
    let types = need(&inputs.cell_types, "cell-type labels")?;
    let clusters = need(&inputs.clusters, "cluster labels")?;
    let graph = knn_graph(emb, inputs.k)?;
    let mut values = BTreeMap::new();
    let mut flags = Vec::new();
    values.insert("Graph_Connectivity".into(), graph_connectivity(&graph, types)?);
    let pcr = pcr_comparison(before, emb, batches, None)?;
    if let Some(f) = pcr.flag {
        flags.push(format!("PCR_Comparison: {f}"));
    }
    values.insert("PCR_Comparison".into(), pcr.value);
    values.insert("iLISI_Graph".into(), lisi(&graph, batches, LisiFlavor::IlisiBatch)?);
    values.insert("kBET".into(), kbet(&graph, batches, Some(types))?);
    values.insert("ASW_batch".into(), asw(emb, batches, AswFlavor::Batch, Some(types))?);
    let iso = isolated_label_score(emb, types, batches)?;
    if let Some(f) = iso.flag {
        flags.push(format!("Isolated_Labels: {f}"));
    }
    values.insert("Isolated_Labels".into(), iso.value);
    values.insert("ARI".into(), ari(clusters, types)?);
    values.insert("NMI".into(), nmi(clusters, types)?);
    values.insert("ASW_cell".into(), asw(emb, types, AswFlavor::Cell, None)?);
    values.insert("cLISI_Graph".into(), lisi(&graph, types, LisiFlavor::ClisiCell)?);
    let mut report = MetricReport::from_batch_values(&values, weights)?;
    report.flags = flags;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_values(batch: f64, bio: f64) -> BTreeMap<String, f64> {
        BATCH_REMOVAL_METRICS
            .iter()
            .map(|m| (m.to_string(), batch))
            .chain(BIO_CONSERVATION_METRICS.iter().map(|m| (m.to_string(), bio)))
            .collect()
    }

    #[test]
    fn overall_of_ones_is_one() {
        assert_eq!(batch_overall(&batch_values(1.0, 1.0), BatchWeights::default()).unwrap(), 1.0);
    }

    #[test]
    fn half_batch_full_bio_is_point_eight() {
        let v = batch_overall(&batch_values(0.5, 1.0), BatchWeights::default()).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn missing_metric_is_named() {
        let mut values = batch_values(0.5, 0.5);
        values.remove("kBET");
        match batch_overall(&values, BatchWeights::default()) {
            Err(MetricError::Missing(name)) => assert_eq!(name, "kBET"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_ari_is_clipped() {
        let mut values = batch_values(1.0, 1.0);
        values.insert("ARI".into(), -0.5);
        let report = MetricReport::from_batch_values(&values, BatchWeights::default()).unwrap();
        assert_eq!(report.per_metric["ARI"], 0.0);
        assert_eq!(report.extras["ARI_raw"], -0.5);
        assert!((report.overall - (0.4 + 0.6 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn names_match_loosely() {
        let values = BTreeMap::from([("ilisi graph".to_string(), 0.3)]);
        assert_eq!(lookup(&values, "iLISI_Graph"), Some(0.3));
    }

    #[test]
    fn trajectory_geometric_mean() {
        let mk = |v: [f64; 4]| -> BTreeMap<String, f64> {
            TRAJECTORY_METRICS.iter().zip(v).map(|(m, v)| (m.to_string(), v)).collect()
        };
        assert!((trajectory_overall(&mk([0.8; 4])).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(trajectory_overall(&mk([1.0, 0.0, 1.0, 1.0])).unwrap(), 0.0);
        assert!((trajectory_overall(&mk([1.0, 1.0, 0.64, 1.0])).unwrap() - 0.8944).abs() < 1e-4);
    }
}
