//! Partition agreement scores computed from the contingency table.

use super::{LabelVector, Result};

struct Contingency {
    table: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

impl Contingency {
    fn build(a: &LabelVector, b: &LabelVector) -> Self {
        let mut table = vec![vec![0u64; b.n_labels()]; a.n_labels()];
        for (&i, &j) in a.codes().iter().zip(b.codes()) {
            table[i][j] += 1;
        }
        let rows = table.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..b.n_labels()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Self { table, rows, cols, n: a.len() as u64 }
    }
}

fn pairs(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index. Ranges over `[-1, 1]`; 1 iff the partitions agree
/// up to relabeling.
pub fn ari(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    a.check_pair(b)?;
    let c = Contingency::build(a, b);
    let index: f64 = c.table.iter().flatten().map(|&x| pairs(x)).sum();
    let sum_a: f64 = c.rows.iter().map(|&x| pairs(x)).sum();
    let sum_b: f64 = c.cols.iter().map(|&x| pairs(x)).sum();
    let expected = sum_a * sum_b / pairs(c.n);
    let max = (sum_a + sum_b) / 2.0;
    let denom = max - expected;
    if denom.abs() < 1e-12 {
        // Both partitions trivial (all-one-cluster or all-singletons).
        return Ok(if (index - expected).abs() < 1e-12 && sum_a == sum_b { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Constant partitions: both constant gives 1, exactly one constant gives 0.
pub fn nmi(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    a.check_pair(b)?;
    let c = Contingency::build(a, b);
    let n = c.n as f64;
    let (ha, hb) = (entropy(&c.rows, n), entropy(&c.cols, n));
    match (a.n_labels() == 1, b.n_labels() == 1) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
        }
    }
    let norm = (ha + hb) / 2.0;
    Ok((mi.max(0.0) / norm).clamp(0.0, 1.0))
}
