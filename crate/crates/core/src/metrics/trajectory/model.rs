use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::metrics::{input_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEdge {
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

/// Where a cell sits on the milestone network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    Milestone(usize),
    /// `progress` is the fraction of the way from `from` to `to`.
    Edge { from: usize, to: usize, progress: f64 },
}

/// Milestone network with cells placed as convex mixtures of adjacent
/// milestones.
#[derive(Debug, Clone)]
pub struct Trajectory {
    milestones: Vec<String>,
    edges: Vec<TrajectoryEdge>,
    cells: BTreeMap<String, Placement>,
    dist: Vec<Vec<f64>>,
}

const MIXTURE_TOL: f64 = 1e-6;

impl Trajectory {
    /// `network` holds `(from, to, length)`; `positions` holds per-cell
    /// `(milestone, percentage)` entries whose percentages sum to 1.
    pub fn new(
        network: &[(String, String, f64)],
        positions: &[(String, Vec<(String, f64)>)],
    ) -> Result<Self> {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        for (a, b, _) in network {
            names.insert(a);
            names.insert(b);
        }
        if names.is_empty() {
            for (_, mix) in positions {
                if let [(m, _)] = mix.as_slice() {
                    names.insert(m);
                }
            }
        }
        if names.is_empty() {
            return input_err("trajectory has no milestones");
        }
        let milestones: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let index: BTreeMap<String, usize> =
            milestones.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for (a, b, len) in network {
            if !(len.is_finite() && *len > 0.0) {
                return input_err(format!("edge {a}-{b} has non-positive length {len}"));
            }
            if a == b {
                return input_err(format!("self-loop at milestone {a}"));
            }
            let (from, to) = (index[a], index[b]);
            if !seen.insert((from.min(to), from.max(to))) {
                return input_err(format!("duplicate edge {a}-{b}"));
            }
            edges.push(TrajectoryEdge { from, to, length: *len });
        }
        let n = milestones.len();
        let mut dist = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for e in &edges {
            dist[e.from][e.to] = dist[e.from][e.to].min(e.length);
            dist[e.to][e.from] = dist[e.from][e.to];
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[i][k] + dist[k][j];
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        if dist[0].iter().any(|d| d.is_infinite()) {
            return input_err("milestone network is not connected");
        }
        let mut traj = Self { milestones, edges, cells: BTreeMap::new(), dist };
        for (cell, mix) in positions {
            let placement = traj.placement_from_mixture(cell, mix, &index)?;
            if traj.cells.insert(cell.clone(), placement).is_some() {
                return input_err(format!("cell {cell} is positioned twice"));
            }
        }
        Ok(traj)
    }

    fn placement_from_mixture(
        &self,
        cell: &str,
        mix: &[(String, f64)],
        index: &BTreeMap<String, usize>,
    ) -> Result<Placement> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (m, pct) in mix {
            let Some(&idx) = index.get(m) else {
                return input_err(format!("cell {cell} references unknown milestone {m}"));
            };
            if !(pct.is_finite() && *pct >= -MIXTURE_TOL) {
                return input_err(format!("cell {cell} has invalid percentage {pct}"));
            }
            *merged.entry(idx).or_default() += pct.max(0.0);
        }
        merged.retain(|_, p| *p > MIXTURE_TOL);
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > MIXTURE_TOL {
            return input_err(format!("percentages of cell {cell} sum to {total}, expected 1"));
        }
        let parts: Vec<(usize, f64)> = merged.into_iter().collect();
        match parts.as_slice() {
            [(m, _)] => Ok(Placement::Milestone(*m)),
            [(a, _), (b, pb)] => {
                if self.edge_between(*a, *b).is_none() {
                    return input_err(format!(
                        "cell {cell} is spread over non-adjacent milestones {} and {}",
                        self.milestones[*a], self.milestones[*b]
                    ));
                }
                Ok(Placement::Edge { from: *a, to: *b, progress: pb / total })
            }
            _ => input_err(format!("cell {cell} is spread over more than two milestones")),
        }
    }

    pub fn milestones(&self) -> &[String] {
        &self.milestones
    }

    pub fn milestone_index(&self, name: &str) -> Option<usize> {
        self.milestones.iter().position(|m| m == name)
    }

    pub fn edges(&self) -> &[TrajectoryEdge] {
        &self.edges
    }

    pub fn cells(&self) -> &BTreeMap<String, Placement> {
        &self.cells
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<&TrajectoryEdge> {
        self.edges.iter().find(|e| (e.from == a && e.to == b) || (e.from == b && e.to == a))
    }

    /// Undirected topology as a set of `(min, max)` milestone pairs.
    pub fn topology(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.from.min(e.to), e.from.max(e.to))).collect()
    }

    pub fn milestone_distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }

    /// Anchors `(milestone, offset)` from which a placement is reachable.
    fn anchors(&self, p: Placement) -> Vec<(usize, f64)> {
        match p {
            Placement::Milestone(m) => vec![(m, 0.0)],
            Placement::Edge { from, to, progress } => {
                let len = self.edge_between(from, to).map_or(0.0, |e| e.length);
                vec![(from, progress * len), (to, (1.0 - progress) * len)]
            }
        }
    }

    /// Geodesic distance along the network between two placements.
    pub fn geodesic(&self, a: Placement, b: Placement) -> f64 {
        if let (
            Placement::Edge { from: fa, to: ta, progress: pa },
            Placement::Edge { from: fb, to: tb, progress: pb },
        ) = (a, b)
        {
            let len = self.edge_between(fa, ta).map_or(0.0, |e| e.length);
            if fa == fb && ta == tb {
                return (pa - pb).abs() * len;
            }
            if fa == tb && ta == fb {
                return (pa - (1.0 - pb)).abs() * len;
            }
        }
        let mut best = f64::INFINITY;
        for (ma, oa) in self.anchors(a) {
            for (mb, ob) in self.anchors(b) {
                best = best.min(oa + self.dist[ma][mb] + ob);
            }
        }
        best
    }

    /// Geodesic distance from a milestone to every cell, keyed by cell id.
    pub fn pseudotime(&self, root: usize) -> BTreeMap<String, f64> {
        self.cells
            .iter()
            .map(|(c, &p)| (c.clone(), self.geodesic(Placement::Milestone(root), p)))
            .collect()
    }

    /// Number of connected components of the topology (always 1 once built).
    pub fn components(&self) -> usize {
        let n = self.milestones.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut q = VecDeque::from([s]);
            seen[s] = true;
            while let Some(u) = q.pop_front() {
                for e in &self.edges {
                    let v = if e.from == u { e.to } else if e.to == u { e.from } else { continue };
                    if !seen[v] {
                        seen[v] = true;
                        q.push_back(v);
                    }
                }
            }
        }
        count
    }
}
