use super::{Clustering, DataSet};
use crate::relax::{AffineExpr, ConicProgram, Layout, ProgramMeta, Var};
use crate::solver::{solve_lp, SolverConfig};
use serde::Serialize;

/// Minimum hard margin for a pair of clusters to count as separable.
pub const SEPARATION_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSeparation {
    pub first: usize,
    pub second: usize,
    /// Best margin `t` of `w'p - b >= t >= b - w'q` with `|w|_inf <= 1`;
    /// `None` when the separation LP did not solve.
    pub margin: Option<f64>,
    pub separable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoronoiReport {
    pub pairs: Vec<PairSeparation>,
}

impl VoronoiReport {
    pub fn all_separable(&self) -> bool {
        self.pairs.iter().all(|p| p.separable)
    }
}

/// Pairwise strict linear separability of the clusters (outliers ignored).
/// A Voronoi partition with one cell per cluster exists iff every pair of
/// cluster hulls can be separated by a hyperplane.
pub fn check_voronoi_compatibility(data: &DataSet, clustering: &Clustering) -> VoronoiReport {
    let cl = clustering.clusters();
    let mut pairs = Vec::new();
    for a in 0..cl.len() {
        for b in (a + 1)..cl.len() {
            let margin = separation_margin(data, &cl[a], &cl[b]);
            pairs.push(PairSeparation {
                first: a,
                second: b,
                margin,
                separable: margin.is_some_and(|t| t > SEPARATION_MARGIN),
            });
        }
    }
    VoronoiReport { pairs }
}

fn separation_margin(data: &DataSet, p: &[usize], q: &[usize]) -> Option<f64> {
    if p.is_empty() || q.is_empty() {
        return Some(f64::INFINITY);
    }
    let d = data.dim();
    // variables: w (d), b, t
    let meta = ProgramMeta { kind: None, layout: Layout::Generic, n: 0, k: 0, spec: None };
    let mut prog = ConicProgram::new(meta);
    prog.add_vector_block("wbt", d + 2);
    let w = |j| Var::vec(0, j);
    let b = Var::vec(0, d);
    let t = Var::vec(0, d + 1);
    prog.objective = AffineExpr { constant: 0.0, terms: vec![(t, -1.0)] };
    for &i in p {
        let mut terms: Vec<(Var, f64)> = (0..d).map(|j| (w(j), -data.point(i)[j])).collect();
        terms.push((b, 1.0));
        terms.push((t, 1.0));
        prog.add_le(terms, 0.0);
    }
    for &i in q {
        let mut terms: Vec<(Var, f64)> = (0..d).map(|j| (w(j), data.point(i)[j])).collect();
        terms.push((b, -1.0));
        terms.push((t, 1.0));
        prog.add_le(terms, 0.0);
    }
    for j in 0..d {
        prog.add_le(vec![(w(j), 1.0)], 1.0);
        prog.add_le(vec![(w(j), -1.0)], 1.0);
    }
    let config = SolverConfig::default().with_tolerance(1e-10);
    let sol = solve_lp(&prog, &config).ok()?;
    sol.status.is_optimal().then(|| -sol.objective)
}
