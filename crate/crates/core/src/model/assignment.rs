//! Capacitated linear assignment (transportation with unit supplies).
//!
//! Rows are inserted one at a time; each insertion augments along a
//! shortest path in the residual graph, where moving a row `j` from
//! column `k` to column `l` costs `c_jl - c_jk`. Since the partial
//! assignment stays optimal after every augmentation the residual graph
//! never contains a negative cycle, so Bellman-Ford over the `K` column
//! nodes suffices.
//!
//! Among equal-cost optima the lexicographically smallest row-to-column
//! mapping is returned: optimal column potentials fix the set of tight
//! edges, and a greedy pass moves each row to its smallest tight column
//! whenever an alternating path of tight edges restores feasibility.

use super::{CardinalitySpec, Clustering};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::collections::VecDeque;

/// A feasible 0/1 assignment stored as the column of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub columns: Vec<usize>,
    pub objective: f64,
}

impl Assignment {
    /// The `N x K` indicator matrix `pi_i^k`.
    pub fn indicator(&self, k: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.columns.len(), k);
        for (i, &c) in self.columns.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    pub fn groups(&self, k: usize) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); k];
        for (i, &c) in self.columns.iter().enumerate() {
            g[c].push(i);
        }
        g
    }
}

/// Minimizes `sum_ik pi_ik cost_ik` subject to unit row sums and column sums `capacities`.
pub fn solve_assignment(cost: &DMatrix<f64>, capacities: &[usize]) -> Result<Assignment> {
    let (n, k) = cost.shape();
    if k != capacities.len() {
        return Err(Error::SpecViolation(format!(
            "cost matrix has {k} columns but {} capacities were given",
            capacities.len()
        )));
    }
    if k == 0 {
        return Err(Error::SpecViolation("no columns".into()));
    }
    if capacities.iter().sum::<usize>() != n {
        return Err(Error::SpecViolation(format!(
            "capacities sum to {} but there are {n} rows",
            capacities.iter().sum::<usize>()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("assignment costs must be finite".into()));
    }
    let scale = 1.0 + cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let mut state = State { cost, columns: vec![usize::MAX; n], count: vec![0; k] };
    for i in 0..n {
        state.insert(i, capacities, scale)?;
    }
    state.lexicographic_pass(scale);
    let objective = state.columns.iter().enumerate().map(|(i, &c)| cost[(i, c)]).sum();
    Ok(Assignment { columns: state.columns, objective })
}

/// Solves the assignment for a cardinality spec. When `n_0 > 0` the cost
/// matrix carries one extra trailing column for the outlier cluster.
pub fn solve_assignment_for_spec(cost: &DMatrix<f64>, spec: &CardinalitySpec) -> Result<Clustering> {
    let mut caps = spec.sizes().to_vec();
    if spec.outlier_count() > 0 {
        caps.push(spec.outlier_count());
    }
    let a = solve_assignment(cost, &caps)?;
    let mut groups = a.groups(caps.len());
    let outliers = if spec.outlier_count() > 0 { groups.pop().unwrap() } else { Vec::new() };
    Ok(Clustering::new(groups, outliers))
}

struct State<'a> {
    cost: &'a DMatrix<f64>,
    columns: Vec<usize>,
    count: Vec<usize>,
}

impl State<'_> {
    /// Cheapest way to move one assigned row from column `a` to column `b`.
    fn move_edges(&self, upto: usize) -> Vec<Vec<Option<(f64, usize)>>> {
        let k = self.count.len();
        let mut w: Vec<Vec<Option<(f64, usize)>>> = vec![vec![None; k]; k];
        for j in 0..upto {
            let a = self.columns[j];
            for b in 0..k {
                if b == a {
                    continue;
                }
                let c = self.cost[(j, b)] - self.cost[(j, a)];
                match w[a][b] {
                    Some((best, _)) if best <= c => {}
                    _ => w[a][b] = Some((c, j)),
                }
            }
        }
        w
    }

    fn insert(&mut self, i: usize, caps: &[usize], scale: f64) -> Result<()> {
        let k = caps.len();
        let w = self.move_edges(i);
        let mut dist: Vec<f64> = (0..k).map(|c| self.cost[(i, c)]).collect();
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; k];
        let eps = 1e-14 * scale;
        for _ in 0..k {
            let mut changed = false;
            for a in 0..k {
                for b in 0..k {
                    if let Some((c, j)) = w[a][b] {
                        if dist[a] + c < dist[b] - eps {
                            dist[b] = dist[a] + c;
                            pred[b] = Some((a, j));
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let end = (0..k)
            .filter(|&c| self.count[c] < caps[c])
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))
            .ok_or_else(|| Error::SpecViolation("no residual capacity".into()))?;
        let mut col = end;
        let mut steps = 0;
        while let Some((from, j)) = pred[col] {
            self.columns[j] = col;
            col = from;
            steps += 1;
            if steps > k {
                return Err(Error::Solver("cycle in assignment augmenting path".into()));
            }
        }
        self.columns[i] = col;
        self.count[end] += 1;
        Ok(())
    }

    /// Column potentials `p` with `c_jk - p_k <= c_jl - p_l` for every row `j` in column `k`.
    fn potentials(&self) -> Vec<f64> {
        let k = self.count.len();
        let w = self.move_edges(self.columns.len());
        let mut p = vec![0.0; k];
        for _ in 0..k {
            let mut changed = false;
            for a in 0..k {
                for b in 0..k {
                    if let Some((c, _)) = w[a][b] {
                        if p[a] + c < p[b] {
                            p[b] = p[a] + c;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        p
    }

    fn lexicographic_pass(&mut self, scale: f64) {
        let n = self.columns.len();
        let k = self.count.len();
        if k == 1 {
            return;
        }
        let p = self.potentials();
        let tol = 1e-10 * scale;
        let reduced = |j: usize, c: usize| self.cost[(j, c)] - p[c];
        let tight: Vec<Vec<bool>> = (0..n)
            .map(|j| {
                let best = (0..k).map(|c| reduced(j, c)).fold(f64::INFINITY, f64::min);
                (0..k).map(|c| reduced(j, c) <= best + tol).collect()
            })
            .collect();
        for i in 0..n {
            let cur = self.columns[i];
            for target in 0..cur {
                if !tight[i][target] {
                    continue;
                }
                if let Some(path) = self.tight_path(i, target, cur, &tight) {
                    self.columns[i] = target;
                    for (j, to) in path {
                        self.columns[j] = to;
                    }
                    break;
                }
            }
        }
    }

    /// Alternating path of tight moves by rows `> i` carrying one unit from `from` to `to`.
    fn tight_path(&self, i: usize, from: usize, to: usize, tight: &[Vec<bool>]) -> Option<Vec<(usize, usize)>> {
        let k = self.count.len();
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; k];
        let mut seen = vec![false; k];
        seen[from] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(a) = queue.pop_front() {
            if a == to {
                break;
            }
            for j in (i + 1)..self.columns.len() {
                if self.columns[j] != a {
                    continue;
                }
                for b in 0..k {
                    if !seen[b] && tight[j][b] {
                        seen[b] = true;
                        pred[b] = Some((a, j));
                        queue.push_back(b);
                    }
                }
            }
        }
        if !seen[to] {
            return None;
        }
        let mut path = Vec::new();
        let mut col = to;
        while let Some((a, j)) = pred[col] {
            path.push((j, col));
            col = a;
        }
        Some(path)
    }
}
