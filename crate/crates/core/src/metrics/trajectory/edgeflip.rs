//! Topology similarity by minimal edge flips over milestone bijections.

use super::Trajectory;
use crate::metrics::{MetricError, Result};

/// Largest milestone count accepted by the exact search.
pub const EDGEFLIP_MAX_MILESTONES: usize = 12;

/// `1 - flips / (|E_ref| + |E_pred|)`, where `flips` is the minimal number of
/// edge additions and deletions turning the predicted topology into the
/// reference one under the best milestone bijection. The smaller network is
/// padded with isolated milestones.
pub fn edgeflip(reference: &Trajectory, predicted: &Trajectory) -> Result<f64> {
    let n = reference.milestones().len().max(predicted.milestones().len());
    if n > EDGEFLIP_MAX_MILESTONES {
        return Err(MetricError::EdgeflipScale { limit: EDGEFLIP_MAX_MILESTONES, got: n });
    }
    let a = adjacency(reference, n);
    let b = adjacency(predicted, n);
    let (ea, eb) = (reference.topology().len(), predicted.topology().len());
    if ea + eb == 0 {
        return Ok(1.0);
    }
    let common = max_common_edges(&a, &b);
    let flips = ea + eb - 2 * common;
    Ok((1.0 - flips as f64 / (ea + eb) as f64).max(0.0))
}

fn adjacency(t: &Trajectory, n: usize) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for (u, v) in t.topology() {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    adj
}

struct Search<'a> {
    a: &'a [Vec<bool>],
    b: &'a [Vec<bool>],
    n: usize,
    /// Reference nodes in assignment order (highest degree first).
    order: Vec<usize>,
    /// `map[u] = Some(v)`: reference node `u` is sent to predicted node `v`.
    map: Vec<Option<usize>>,
    used: Vec<bool>,
    best: usize,
}

impl Search<'_> {
    /// Edges `u` would share with already-assigned nodes if mapped to `v`.
    fn gain(&self, u: usize, v: usize) -> usize {
        (0..self.n)
            .filter(|&w| self.a[u][w])
            .filter_map(|w| self.map[w])
            .filter(|&pw| self.b[v][pw])
            .count()
    }

    /// Upper bound on the final common-edge count: the current count plus an
    /// optimal assignment of free reference nodes to free predicted nodes,
    /// where a pair earns its exact gain towards assigned nodes plus half the
    /// smaller number of edges each still has towards free nodes.
    fn upper_bound(&self, depth: usize, common: usize) -> usize {
        let free_a = &self.order[depth..];
        let free_b: Vec<usize> = (0..self.n).filter(|&v| !self.used[v]).collect();
        let free_deg = |adj: &[Vec<bool>], x: usize, free: &[usize]| free.iter().filter(|&&y| adj[x][y]).count();
        let weights: Vec<Vec<i64>> = free_a
            .iter()
            .map(|&u| {
                let du = free_deg(self.a, u, free_a);
                free_b
                    .iter()
                    .map(|&v| (2 * self.gain(u, v) + du.min(free_deg(self.b, v, &free_b))) as i64)
                    .collect()
            })
            .collect();
        common + (max_assignment(&weights) / 2) as usize
    }

    fn run(&mut self, depth: usize, common: usize) {
        if depth == self.n {
            self.best = self.best.max(common);
            return;
        }
        if self.upper_bound(depth, common) <= self.best {
            return;
        }
        let u = self.order[depth];
        let mut candidates: Vec<(usize, usize)> = (0..self.n)
            .filter(|&v| !self.used[v])
            .map(|v| (self.gain(u, v), v))
            .collect();
        candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        for (g, v) in candidates {
            self.map[u] = Some(v);
            self.used[v] = true;
            self.run(depth + 1, common + g);
            self.map[u] = None;
            self.used[v] = false;
        }
    }
}

/// Maximum-weight perfect assignment on a square matrix (Hungarian method).
fn max_assignment(w: &[Vec<i64>]) -> i64 {
    let n = w.len();
    if n == 0 {
        return 0;
    }
    let max = w.iter().flatten().copied().max().unwrap_or(0);
    // Minimize (max - w) with 1-based potentials.
    let cost = |i: usize, j: usize| max - w[i - 1][j - 1];
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| w[p[j] - 1][j - 1]).sum()
}

fn max_common_edges(a: &[Vec<bool>], b: &[Vec<bool>]) -> usize {
    let max_degree = |g: &[Vec<bool>]| g.iter().map(|r| r.iter().filter(|&&x| x).count()).max().unwrap_or(0);
    // The count is symmetric; branching on the graph with the largest hub prunes sooner.
    let (a, b) = if max_degree(b) > max_degree(a) { (b, a) } else { (a, b) };
    let n = a.len();
    let degree = |u: usize| a[u].iter().filter(|&&x| x).count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| degree(y).cmp(&degree(x)).then(x.cmp(&y)));
    let mut search =
        Search { a, b, n, order, map: vec![None; n], used: vec![false; n], best: 0 };
    search.run(0, 0);
    search.best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(edges: &[(&str, &str)]) -> Trajectory {
        let net: Vec<_> = edges.iter().map(|(a, b)| (a.to_string(), b.to_string(), 1.0)).collect();
        Trajectory::new(&net, &[]).unwrap()
    }

    #[test]
    fn assignment_solver_finds_optimum() {
        let w = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        // 4 + 5 + 2 = 11 beats every other permutation.
        assert_eq!(max_assignment(&w), 11);
    }

    #[test]
    fn path_versus_triangle() {
        let path = topo(&[("A", "B"), ("B", "C")]);
        let tri = topo(&[("A", "B"), ("B", "C"), ("A", "C")]);
        assert!((edgeflip(&path, &tri).unwrap() - 0.8).abs() < 1e-12);
        assert!((edgeflip(&tri, &path).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn isomorphic_relabeled_is_one() {
        let a = topo(&[("A", "B"), ("B", "C"), ("B", "D")]);
        let b = topo(&[("x", "y"), ("x", "z"), ("x", "w")]);
        assert_eq!(edgeflip(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn too_many_milestones() {
        let names: Vec<String> = (0..13).map(|i| format!("m{i}")).collect();
        let edges: Vec<(&str, &str)> =
            names.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        let t = topo(&edges);
        assert!(matches!(edgeflip(&t, &t), Err(MetricError::EdgeflipScale { .. })));
    }

    #[test]
    fn twelve_milestone_trees_finish() {
        let names: Vec<String> = (0..12).map(|i| format!("m{i}")).collect();
        let path: Vec<(&str, &str)> = names.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        let star: Vec<(&str, &str)> = names[1..].iter().map(|n| (names[0].as_str(), n.as_str())).collect();
        let v = edgeflip(&topo(&path), &topo(&star)).unwrap();
        // A star shares at most 2 edges with a path.
        assert!((v - 4.0 / 22.0).abs() < 1e-12, "{v}");
    }
}
