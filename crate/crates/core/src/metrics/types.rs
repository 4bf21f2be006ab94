use std::collections::{BTreeMap, BTreeSet};

use super::{input_err, Result};

/// Per-cell categorical labels, stored as dense codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    codes: Vec<usize>,
    names: Vec<String>,
}

impl LabelVector {
    /// Codes are assigned in order of first appearance.
    pub fn new<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut names = Vec::new();
        let codes = values
            .into_iter()
            .map(|v| {
                let v = v.into();
                *index.entry(v.clone()).or_insert_with(|| {
                    names.push(v);
                    names.len() - 1
                })
            })
            .collect();
        Self { codes, names }
    }

    pub fn from_codes(codes: &[usize]) -> Self {
        Self::new(codes.iter().map(|c| c.to_string()))
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn n_labels(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, code: usize) -> &str {
        &self.names[code]
    }

    pub fn label_of(&self, cell: usize) -> &str {
        &self.names[self.codes[cell]]
    }

    /// Restrict to the given cell indices, re-coding labels.
    pub fn subset(&self, cells: &[usize]) -> Self {
        Self::new(cells.iter().map(|&i| self.label_of(i).to_string()))
    }

    /// Cell indices grouped by label code.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.names.len()];
        for (i, &c) in self.codes.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    pub(crate) fn check_pair(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return input_err(format!(
                "label vectors differ in length ({} vs {})",
                self.len(),
                other.len()
            ));
        }
        if self.len() < 2 {
            return input_err("at least two cells are required");
        }
        Ok(())
    }
}

/// Dense row-major `n × d` coordinate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Embedding {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return input_err("embedding must have at least one dimension");
        }
        if data.len() != n * d {
            return input_err(format!("embedding buffer has {} values, expected {n}×{d}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return input_err("embedding contains non-finite values");
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return input_err("embedding rows have inconsistent widths");
        }
        Self::new(rows.concat(), rows.len(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn subset(&self, cells: &[usize]) -> Self {
        let mut data = Vec::with_capacity(cells.len() * self.d);
        for &i in cells {
            data.extend_from_slice(self.row(i));
        }
        Self { data, n: cells.len(), d: self.d }
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_labels(&self, labels: &LabelVector) -> Result<()> {
        if labels.len() != self.n {
            return input_err(format!(
                "embedding has {} rows but labels cover {} cells",
                self.n,
                labels.len()
            ));
        }
        if self.n < 2 {
            return input_err("at least two cells are required");
        }
        Ok(())
    }
}

/// Per-cell neighbor lists of uniform size `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    neighbors: Vec<Vec<usize>>,
    k: usize,
}

impl NeighborGraph {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        let k = neighbors.first().map_or(0, Vec::len);
        for (i, list) in neighbors.iter().enumerate() {
            if list.len() != k {
                return input_err(format!("cell {i} has {} neighbors, expected {k}", list.len()));
            }
            if list.contains(&i) {
                return input_err(format!("cell {i} lists itself as a neighbor"));
            }
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return input_err(format!("cell {i} references unknown cell {bad}"));
            }
        }
        if n > 0 && k >= n {
            return input_err(format!("k = {k} must be smaller than the cell count {n}"));
        }
        Ok(Self { neighbors, k })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Undirected edge set, each edge stored once as `(min, max)`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        edges
    }
}

/// A metric value with an optional note explaining a degenerate case.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flag: Option<String>,
}

impl<T> Flagged<T> {
    pub fn clean(value: T) -> Self {
        Self { value, flag: None }
    }

    #[allow(clippy::self_named_constructors)]
    pub fn flagged(value: T, flag: impl Into<String>) -> Self {
        Self { value, flag: Some(flag.into()) }
    }
}
