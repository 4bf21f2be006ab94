//! Neighbor-graph metrics: graph connectivity, LISI and kBET.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{input_err, Embedding, LabelVector, NeighborGraph, Result};

/// Significance level of the per-cell kBET chi-square test.
pub const KBET_ALPHA: f64 = 0.05;

/// Exact k-nearest-neighbor graph (Euclidean; ties broken by cell index).
pub fn knn_graph(emb: &Embedding, k: usize) -> Result<NeighborGraph> {
    let n = emb.n();
    if k == 0 || k >= n {
        return input_err(format!("k = {k} must lie in 1..{n}"));
    }
    let mut lists = Vec::with_capacity(n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| (emb.distance(i, j), j)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        lists.push(order[..k].iter().map(|&(_, j)| j).collect());
    }
    NeighborGraph::new(lists)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Mean over cell types of the largest connected component's share of the
/// type, computed on the type-induced subgraph of the symmetrized graph.
pub fn graph_connectivity(graph: &NeighborGraph, cell_types: &LabelVector) -> Result<f64> {
    if graph.n() != cell_types.len() {
        return input_err(format!(
            "graph covers {} cells, labels cover {}",
            graph.n(),
            cell_types.len()
        ));
    }
    let mut uf = UnionFind::new(graph.n());
    for (i, j) in graph.edges() {
        if cell_types.codes()[i] == cell_types.codes()[j] {
            uf.union(i, j);
        }
    }
    let mut scores = Vec::new();
    for cells in cell_types.groups().iter().filter(|g| !g.is_empty()) {
        let mut comp_sizes = std::collections::HashMap::new();
        for &c in cells {
            *comp_sizes.entry(uf.find(c)).or_insert(0usize) += 1;
        }
        let largest = comp_sizes.values().copied().max().unwrap_or(0);
        scores.push(largest as f64 / cells.len() as f64);
    }
    if scores.is_empty() {
        return input_err("no cell types present");
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LisiFlavor {
    /// Batch mixing: `(L - 1) / (B - 1)`.
    IlisiBatch,
    /// Cell-type separation: `(C - L) / (C - 1)`.
    ClisiCell,
}

fn inverse_simpson(counts: &[usize], total: usize) -> f64 {
    let total = total as f64;
    let simpson: f64 = counts.iter().map(|&c| (c as f64 / total).powi(2)).sum();
    1.0 / simpson
}

/// Local inverse Simpson index over each cell's neighbor list, averaged and
/// normalized to `[0, 1]`.
pub fn lisi(graph: &NeighborGraph, labels: &LabelVector, flavor: LisiFlavor) -> Result<f64> {
    if graph.n() != labels.len() {
        return input_err(format!("graph covers {} cells, labels cover {}", graph.n(), labels.len()));
    }
    let n_labels = labels.n_labels();
    if n_labels < 2 {
        return input_err(match flavor {
            LisiFlavor::IlisiBatch => "iLISI needs at least two batches",
            LisiFlavor::ClisiCell => "cLISI needs at least two cell types",
        });
    }
    if graph.k() == 0 {
        return input_err("neighbor lists are empty");
    }
    let mut counts = vec![0usize; n_labels];
    let mut sum = 0.0;
    for i in 0..graph.n() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &j in graph.neighbors(i) {
            counts[labels.codes()[j]] += 1;
        }
        sum += inverse_simpson(&counts, graph.k());
    }
    let l = sum / graph.n() as f64;
    let m = n_labels as f64;
    let score = match flavor {
        LisiFlavor::IlisiBatch => (l - 1.0) / (m - 1.0),
        LisiFlavor::ClisiCell => (m - l) / (m - 1.0),
    };
    Ok(score.clamp(0.0, 1.0))
}

/// kBET acceptance rate: the fraction of cells whose neighborhood batch
/// composition is not rejected by a chi-square test against the global batch
/// proportions. With `cell_types`, rates are averaged per type, then across
/// types.
pub fn kbet(
    graph: &NeighborGraph,
    batches: &LabelVector,
    cell_types: Option<&LabelVector>,
) -> Result<f64> {
    let n = graph.n();
    if n != batches.len() {
        return input_err(format!("graph covers {n} cells, batch labels cover {}", batches.len()));
    }
    let n_batches = batches.n_labels();
    if n_batches < 2 {
        return input_err("kBET needs at least two batches");
    }
    if graph.k() < 10 {
        return input_err(format!("kBET needs k >= 10, got {}", graph.k()));
    }
    let k = graph.k() as f64;
    let global: Vec<f64> = batches.groups().iter().map(|g| g.len() as f64 / n as f64).collect();
    let chi = ChiSquared::new((n_batches - 1) as f64)
        .map_err(|e| super::MetricError::Input(e.to_string()))?;
    let mut counts = vec![0usize; n_batches];
    let accepted: Vec<bool> = (0..n)
        .map(|i| {
            counts.iter_mut().for_each(|c| *c = 0);
            for &j in graph.neighbors(i) {
                counts[batches.codes()[j]] += 1;
            }
            let stat: f64 = counts
                .iter()
                .zip(&global)
                .map(|(&o, &p)| {
                    let e = k * p;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            let p_value = 1.0 - chi.cdf(stat);
            p_value >= KBET_ALPHA
        })
        .collect();
    let rate = |cells: &[usize]| {
        cells.iter().filter(|&&i| accepted[i]).count() as f64 / cells.len() as f64
    };
    match cell_types {
        None => Ok(rate(&(0..n).collect::<Vec<_>>())),
        Some(types) => {
            if types.len() != n {
                return input_err("cell-type labels do not match the graph");
            }
            let per_type: Vec<f64> =
                types.groups().iter().filter(|g| !g.is_empty()).map(|g| rate(g)).collect();
            Ok(per_type.iter().sum::<f64>() / per_type.len() as f64)
        }
    }
}
