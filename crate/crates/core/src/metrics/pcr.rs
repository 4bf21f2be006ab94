//! Principal component regression against batch labels.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Embedding, Flagged, LabelVector, Result};

/// Share of an embedding's total variance explained by batch through its
/// principal components: `Σ_k var_k · R²_k / total_var`, where `R²_k` is the
/// coefficient of determination of component `k` regressed on batch
/// indicators. `n_comps = None` keeps every component.
pub fn batch_variance(emb: &Embedding, batches: &LabelVector, n_comps: Option<usize>) -> Result<f64> {
    emb.check_labels(batches)?;
    let (n, d) = (emb.n(), emb.dim());
    let mut x = DMatrix::from_fn(n, d, |i, j| emb.row(i)[j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let total: f64 = cov.trace();
    if total <= 1e-300 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let keep = n_comps.unwrap_or(d).min(d);
    let groups = batches.groups();
    let mut explained = 0.0;
    for &k in order.iter().take(keep) {
        let var_k = eig.eigenvalues[k];
        if var_k <= total * 1e-12 {
            continue;
        }
        let scores = &x * eig.eigenvectors.column(k);
        explained += var_k * r_squared(scores.as_slice(), &groups);
    }
    Ok((explained / total).clamp(0.0, 1.0))
}

/// R² of a one-hot regression: between-group over total sum of squares.
fn r_squared(values: &[f64], groups: &[Vec<usize>]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let total: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let between: f64 = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let gm = g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64;
            g.len() as f64 * (gm - mean).powi(2)
        })
        .sum();
    between / total
}

/// Relative reduction of batch-explained variance after integration,
/// clamped to `[0, 1]`. Flagged (score 0) when nothing was batch-explained
/// to begin with.
pub fn pcr_comparison(
    before: &Embedding,
    after: &Embedding,
    batches: &LabelVector,
    n_comps: Option<usize>,
) -> Result<Flagged<f64>> {
    let var_before = batch_variance(before, batches, n_comps)?;
    let var_after = batch_variance(after, batches, n_comps)?;
    if var_before <= 1e-12 {
        return Ok(Flagged::flagged(0.0, "no batch variance before integration"));
    }
    Ok(Flagged::clean(((var_before - var_after) / var_before).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_score_zero() {
        let emb = Embedding::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![5.0, 2.0], vec![6.0, 3.0]])
            .unwrap();
        let b = LabelVector::new(["a", "a", "b", "b"]);
        assert_eq!(pcr_comparison(&emb, &emb, &b, None).unwrap().value, 0.0);
    }

    #[test]
    fn increased_batch_variance_clamps_to_zero() {
        let b = LabelVector::new(["a", "b", "a", "b"]);
        let before = Embedding::from_rows(&[vec![0.0], vec![0.2], vec![1.0], vec![1.1]]).unwrap();
        let after = Embedding::from_rows(&[vec![0.0], vec![5.0], vec![0.1], vec![5.1]]).unwrap();
        assert_eq!(pcr_comparison(&before, &after, &b, None).unwrap().value, 0.0);
    }

    #[test]
    fn zero_before_variance_is_flagged() {
        let b = LabelVector::new(["a", "b", "a", "b"]);
        let emb = Embedding::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        let v = pcr_comparison(&emb, &emb, &b, None).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.flag.is_some());
    }
}
