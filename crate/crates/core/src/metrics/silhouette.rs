//! Silhouette-based scores: ASW (cell and batch flavors) and isolated labels.

use std::collections::BTreeSet;

use super::{input_err, Embedding, Flagged, LabelVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AswFlavor {
    /// Cell-type separation, rescaled to `[0, 1]`.
    Cell,
    /// Batch mixing within each cell type: mean of `1 - |s|`.
    Batch,
}

/// Per-cell silhouette widths with Euclidean distance. Cells in singleton
/// clusters get 0.
pub fn silhouette_samples(emb: &Embedding, labels: &LabelVector) -> Result<Vec<f64>> {
    emb.check_labels(labels)?;
    let n = emb.n();
    let groups = labels.groups();
    let n_labels = groups.len();
    let mut sums = vec![0.0; n_labels];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels.codes()[j]] += emb.distance(i, j);
            }
        }
        let own = labels.codes()[i];
        let own_size = groups[own].len();
        if own_size <= 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (own_size - 1) as f64;
        let b = (0..n_labels)
            .filter(|&c| c != own && !groups[c].is_empty())
            .map(|c| sums[c] / groups[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            out.push(0.0);
            continue;
        }
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average silhouette width.
///
/// `labels` are cell types for [`AswFlavor::Cell`] and batches for
/// [`AswFlavor::Batch`]; the batch flavor also needs the cell types it mixes
/// within. Cell-type groups present in a single batch are skipped.
pub fn asw(
    emb: &Embedding,
    labels: &LabelVector,
    flavor: AswFlavor,
    cell_types: Option<&LabelVector>,
) -> Result<f64> {
    emb.check_labels(labels)?;
    match flavor {
        AswFlavor::Cell => {
            if labels.n_labels() < 2 {
                return input_err("ASW_cell needs at least two cell types");
            }
            let s = silhouette_samples(emb, labels)?;
            Ok((mean(&s) + 1.0) / 2.0)
        }
        AswFlavor::Batch => {
            let Some(types) = cell_types else {
                return input_err("ASW_batch needs cell-type labels");
            };
            emb.check_labels(types)?;
            let mut per_type = Vec::new();
            for cells in types.groups() {
                let batches = labels.subset(&cells);
                if batches.n_labels() < 2 {
                    continue;
                }
                let s = silhouette_samples(&emb.subset(&cells), &batches)?;
                per_type.push(mean(&s.iter().map(|v| 1.0 - v.abs()).collect::<Vec<_>>()));
            }
            if per_type.is_empty() {
                return input_err("ASW_batch: no cell type spans two or more batches");
            }
            Ok(mean(&per_type))
        }
    }
}

/// Silhouette score of the label(s) present in the fewest batches against
/// all other cells, rescaled to `[0, 1]` and averaged over tied labels.
///
/// Flagged when every label occurs in every batch (no label is isolated).
pub fn isolated_label_score(
    emb: &Embedding,
    cell_types: &LabelVector,
    batches: &LabelVector,
) -> Result<Flagged<f64>> {
    emb.check_labels(cell_types)?;
    emb.check_labels(batches)?;
    let groups = cell_types.groups();
    let batch_counts: Vec<usize> = groups
        .iter()
        .map(|cells| cells.iter().map(|&i| batches.codes()[i]).collect::<BTreeSet<_>>().len())
        .collect();
    let Some(&min) = batch_counts.iter().min() else {
        return input_err("no labels present");
    };
    let isolated: Vec<usize> = (0..groups.len()).filter(|&c| batch_counts[c] == min).collect();
    let mut scores = Vec::with_capacity(isolated.len());
    for &label in &isolated {
        let binary = LabelVector::new(
            cell_types.codes().iter().map(|&c| if c == label { "isolated" } else { "rest" }),
        );
        if binary.n_labels() < 2 {
            // A single label covering every cell has nothing to separate from.
            scores.push(0.5);
            continue;
        }
        let s = silhouette_samples(emb, &binary)?;
        scores.push((mean(&s) + 1.0) / 2.0);
    }
    let value = mean(&scores);
    if min == batches.n_labels() {
        Ok(Flagged::flagged(value, "every label occurs in every batch; scored all labels"))
    } else {
        Ok(Flagged::clean(value))
    }
}
