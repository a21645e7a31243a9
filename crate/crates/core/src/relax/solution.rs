use super::program::{ConicProgram, Layout, Var};
use super::RelaxationKind;
use crate::error::{Error, Result};
use crate::model::{CardinalitySpec, Clustering};
use crate::solver::{IterationRecord, SolverStatus};
use nalgebra::{DMatrix, DVector};

/// Default absolute tolerance for "feasible within tolerance" checks.
pub const DEFAULT_FEASIBILITY_TOLERANCE: f64 = 1e-6;

/// Values of every block of a program plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSolution {
    pub kind: Option<RelaxationKind>,
    pub layout: Layout,
    pub spec: Option<CardinalitySpec>,
    /// One entry per vector block, in program order.
    pub vectors: Vec<DVector<f64>>,
    /// One symmetric matrix per matrix block, in program order.
    pub matrices: Vec<DMatrix<f64>>,
    /// Primal objective value.
    pub objective: f64,
    pub dual_objective: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl RelaxationSolution {
    /// Unpacks a flat variable vector; diagnostics are left neutral.
    pub fn from_values(program: &ConicProgram, values: &[f64]) -> Self {
        let vectors = program
            .vector_blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                DVector::from_iterator(blk.len, (0..blk.len).map(|i| values[program.var_index(Var::vec(b, i))]))
            })
            .collect();
        let matrices = program
            .matrix_blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                DMatrix::from_fn(blk.order, blk.order, |i, j| values[program.var_index(Var::mat(b, i, j))])
            })
            .collect();
        Self {
            kind: program.meta.kind,
            layout: program.meta.layout,
            spec: program.meta.spec.clone(),
            vectors,
            matrices,
            objective: program.evaluate_objective(values),
            dual_objective: None,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            status: SolverStatus::Optimal,
            iterations: 0,
            history: Vec::new(),
        }
    }

    /// Flattens back to the variable order of `program`.
    pub fn values(&self, program: &ConicProgram) -> Vec<f64> {
        let mut v = vec![0.0; program.var_count()];
        for (b, x) in self.vectors.iter().enumerate() {
            for i in 0..x.len() {
                v[program.var_index(Var::vec(b, i))] = x[i];
            }
        }
        for (b, m) in self.matrices.iter().enumerate() {
            for i in 0..m.nrows() {
                for j in i..m.ncols() {
                    v[program.var_index(Var::mat(b, i, j))] = 0.5 * (m[(i, j)] + m[(j, i)]);
                }
            }
        }
        v
    }

    pub fn is_certified(&self) -> bool {
        self.status.is_optimal()
    }

    fn k(&self) -> Result<usize> {
        self.spec
            .as_ref()
            .map(|s| s.k())
            .ok_or_else(|| Error::InvalidInput("solution carries no cardinality spec".into()))
    }

    /// The `(x^k, M^k)` pairs of clusters `1..K` with shared blocks expanded.
    /// Assignment-space solutions are mapped back via `x = 2 pi - 1`,
    /// `M = 4 eta - x1' - 1x' - 11'`.
    pub fn cluster_pairs(&self) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let k = self.k()?;
        let pair = |b: usize| (self.vectors[b].clone(), self.matrices[b].clone());
        Ok(match self.layout {
            Layout::PerCluster => (0..k).map(pair).collect(),
            Layout::MirroredPair => {
                let (x, m) = pair(0);
                vec![(x.clone(), m.clone()), (-x, m)]
            }
            Layout::Balanced => {
                let mut v = vec![pair(0)];
                v.extend(std::iter::repeat_n(pair(1), k - 1));
                v
            }
            Layout::PerClusterWithOutliers => (1..=k).map(pair).collect(),
            Layout::BalancedWithOutliers => std::iter::repeat_n(pair(0), k).collect(),
            Layout::Assignment => (0..k)
                .map(|c| {
                    let pi = &self.vectors[c];
                    let eta = &self.matrices[c];
                    let x = pi.map(|p| 2.0 * p - 1.0);
                    let n = x.len();
                    let m = DMatrix::from_fn(n, n, |i, j| 4.0 * eta[(i, j)] - x[i] - x[j] - 1.0);
                    (x, m)
                })
                .collect(),
            Layout::Gram | Layout::Generic => {
                return Err(Error::InvalidInput("solution has no (x, M) pairs".into()))
            }
        })
    }

    /// `(x^0, M^0)` for outlier layouts.
    pub fn outlier_pair(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let b = match self.layout {
            Layout::PerClusterWithOutliers => 0,
            Layout::BalancedWithOutliers => 1,
            _ => return None,
        };
        Some((self.vectors[b].clone(), self.matrices[b].clone()))
    }
}

fn signs(members: &[usize], n: usize) -> DVector<f64> {
    let mut x = DVector::from_element(n, -1.0);
    for &i in members {
        x[i] = 1.0;
    }
    x
}

/// Integral embedding into the general relaxation (`R_SDP`/`R_LP`, or
/// their outlier versions when `n_0 > 0`). The objective is left unset
/// (NaN) since it depends on the distances; evaluate it against a program.
pub fn embed_integral(clustering: &Clustering, spec: &CardinalitySpec) -> Result<RelaxationSolution> {
    let kind = if spec.outlier_count() > 0 { RelaxationKind::RSdpO } else { RelaxationKind::RSdp };
    embed_integral_for(kind, clustering, spec)
}

/// Integral embedding `x^k_i = +-1`, `M^k = x^k x^k'` in the block layout
/// of `kind`. Shared blocks of balanced kinds hold the average of the
/// pairs they represent; the balanced first block is the cluster
/// containing point 0.
pub fn embed_integral_for(
    kind: RelaxationKind,
    clustering: &Clustering,
    spec: &CardinalitySpec,
) -> Result<RelaxationSolution> {
    let n = clustering.n_points();
    clustering.validate(n, spec)?;
    if !kind.is_pair_based() && kind != RelaxationKind::NaiveL {
        return Err(Error::InvalidInput(format!("{kind} has no integral (x, M) embedding")));
    }
    if kind.requires_balanced() && !spec.is_balanced() {
        return Err(Error::SpecViolation(format!("{kind} requires equal cluster sizes")));
    }
    if kind.requires_outliers() != (spec.outlier_count() > 0) {
        return Err(Error::SpecViolation(format!("{kind} does not match the outlier count")));
    }
    let k = spec.k();
    let pairs: Vec<(DVector<f64>, DMatrix<f64>)> = clustering
        .clusters()
        .iter()
        .map(|c| {
            let x = signs(c, n);
            let m = &x * x.transpose();
            (x, m)
        })
        .collect();
    let outlier = {
        let x = signs(clustering.outliers(), n);
        let m = &x * x.transpose();
        (x, m)
    };
    let average = |idx: &[usize]| {
        let mut x = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for &c in idx {
            x += &pairs[c].0;
            m += &pairs[c].1;
        }
        let s = 1.0 / idx.len().max(1) as f64;
        (x * s, m * s)
    };
    use RelaxationKind::*;
    let (layout, blocks): (Layout, Vec<(DVector<f64>, DMatrix<f64>)>) = match kind {
        RLp | RSdp if k == 2 => (Layout::MirroredPair, vec![pairs[0].clone()]),
        RLp | RSdp => (Layout::PerCluster, pairs.clone()),
        RLpB | RSdpB => {
            let first = clustering.clusters().iter().position(|c| c.contains(&0)).unwrap_or(0);
            let rest: Vec<usize> = (0..k).filter(|&c| c != first).collect();
            let shared = if rest.is_empty() {
                (DVector::from_element(n, 1.0), DMatrix::from_element(n, n, 1.0))
            } else {
                average(&rest)
            };
            (Layout::Balanced, vec![pairs[first].clone(), shared])
        }
        RLpO | RSdpO => {
            let mut v = vec![outlier.clone()];
            v.extend(pairs.iter().cloned());
            (Layout::PerClusterWithOutliers, v)
        }
        RLpOb | RSdpOb => {
            let all: Vec<usize> = (0..k).collect();
            (Layout::BalancedWithOutliers, vec![average(&all), outlier.clone()])
        }
        NaiveL => {
            let mut vectors = Vec::new();
            let mut matrices = Vec::new();
            for (x, _) in &pairs {
                let pi = x.map(|v| (v + 1.0) / 2.0);
                let eta = &pi * pi.transpose();
                vectors.push(pi);
                matrices.push(eta);
            }
            return Ok(solution(kind, Layout::Assignment, spec, vectors, matrices));
        }
        _ => unreachable!(),
    };
    let (vectors, matrices) = blocks.into_iter().unzip();
    Ok(solution(kind, layout, spec, vectors, matrices))
}

fn solution(
    kind: RelaxationKind,
    layout: Layout,
    spec: &CardinalitySpec,
    vectors: Vec<DVector<f64>>,
    matrices: Vec<DMatrix<f64>>,
) -> RelaxationSolution {
    RelaxationSolution {
        kind: Some(kind),
        layout,
        spec: Some(spec.clone()),
        vectors,
        matrices,
        objective: f64::NAN,
        dual_objective: None,
        primal_residual: 0.0,
        dual_residual: 0.0,
        gap: 0.0,
        status: SolverStatus::Optimal,
        iterations: 0,
        history: Vec::new(),
    }
}

/// Largest violation of `(x, M) in C_SDP(n)`: row sums are scaled by `1/N`,
/// the Schur eigenvalue by `1/(N+1)`.
fn pair_violation(x: &DVector<f64>, m: &DMatrix<f64>, n: usize) -> f64 {
    let big_n = x.len();
    let nf = big_n as f64;
    let rhs = 2.0 * n as f64 - nf;
    let mut v = (x.sum() - rhs).abs() / nf;
    for i in 0..big_n {
        v = v.max((m.row(i).sum() - rhs * x[i]).abs() / nf);
        v = v.max((m[(i, i)] - 1.0).abs());
        for j in 0..big_n {
            let mij = m[(i, j)];
            v = v.max(-(mij + 1.0 + x[i] + x[j]));
            v = v.max(-(mij + 1.0 - x[i] - x[j]));
            v = v.max(mij - 1.0 + x[i] - x[j]);
            v = v.max(mij - 1.0 - x[i] + x[j]);
        }
    }
    let mut schur = DMatrix::zeros(big_n + 1, big_n + 1);
    schur.view_mut((0, 0), (big_n, big_n)).copy_from(&((m + m.transpose()) * 0.5));
    for i in 0..big_n {
        schur[(i, big_n)] = x[i];
        schur[(big_n, i)] = x[i];
    }
    schur[(big_n, big_n)] = 1.0;
    let lmin = nalgebra::SymmetricEigen::new(schur).eigenvalues.min();
    v.max(-lmin / (nf + 1.0))
}

/// Lifts an `R_SDP` / `R_SDP_b` solution to the co-membership matrix
/// `Z = (1/4) sum_k (1/n_k)(M^k + 11' + x^k 1' + 1 x^k')`.
pub fn lift_to_pw(solution: &RelaxationSolution, spec: &CardinalitySpec) -> Result<DMatrix<f64>> {
    lift_to_pw_with_tolerance(solution, spec, DEFAULT_FEASIBILITY_TOLERANCE)
}

pub fn lift_to_pw_with_tolerance(
    solution: &RelaxationSolution,
    spec: &CardinalitySpec,
    tol: f64,
) -> Result<DMatrix<f64>> {
    if spec.outlier_count() > 0
        || matches!(solution.layout, Layout::PerClusterWithOutliers | Layout::BalancedWithOutliers)
    {
        return Err(Error::InvalidInput("lifting applies to relaxations without outliers".into()));
    }
    let mut sol = solution.clone();
    sol.spec = Some(spec.clone());
    let pairs = sol.cluster_pairs()?;
    if pairs.len() != spec.k() {
        return Err(Error::InvalidInput("solution and spec disagree on K".into()));
    }
    let big_n = pairs[0].0.len();
    let mut residual = 0.0f64;
    let mut sum = DVector::zeros(big_n);
    for ((x, m), &n) in pairs.iter().zip(spec.sizes()) {
        residual = residual.max(pair_violation(x, m, n));
        sum += x;
    }
    let target = 2.0 - spec.k() as f64;
    residual = residual.max(sum.iter().fold(0.0f64, |a, &s| a.max((s - target).abs())));
    if residual > tol {
        return Err(Error::Precondition {
            message: "relaxation solution is not feasible within tolerance".into(),
            residual,
        });
    }
    let mut z = DMatrix::zeros(big_n, big_n);
    for ((x, m), &n) in pairs.iter().zip(spec.sizes()) {
        let w = 0.25 / n as f64;
        for i in 0..big_n {
            for j in 0..big_n {
                z[(i, j)] += w * (0.5 * (m[(i, j)] + m[(j, i)]) + 1.0 + x[i] + x[j]);
            }
        }
    }
    Ok(z)
}

/// Violations of the PW1 (and, with `balanced`, PW1_b) constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwFeasibility {
    /// `max(0, -lambda_min(Z))`.
    pub psd: f64,
    /// `max(0, -min_ij z_ij)`.
    pub nonnegativity: f64,
    /// `max_i |(Z1)_i - 1|`.
    pub row_sums: f64,
    /// `|Tr Z - K|`.
    pub trace: f64,
    /// `max(0, max_ij z_ij - K/N)`; zero unless `balanced`.
    pub upper_bound: f64,
}

impl PwFeasibility {
    pub fn max(&self) -> f64 {
        [self.psd, self.nonnegativity, self.row_sums, self.trace, self.upper_bound]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn pw_feasibility(z: &DMatrix<f64>, k: usize, balanced: bool) -> PwFeasibility {
    let n = z.nrows();
    let sym = (z + z.transpose()) * 0.5;
    let lmin = nalgebra::SymmetricEigen::new(sym.clone()).eigenvalues.min();
    let cap = k as f64 / n as f64;
    PwFeasibility {
        psd: (-lmin).max(0.0),
        nonnegativity: (-sym.min()).max(0.0),
        row_sums: (0..n).map(|i| (sym.row(i).sum() - 1.0).abs()).fold(0.0, f64::max),
        trace: (sym.trace() - k as f64).abs(),
        upper_bound: if balanced { (sym.max() - cap).max(0.0) } else { 0.0 },
    }
}

/// `pi = (x + 1)/2`, `eta_ij = (m_ij + x_i + x_j + 1)/4`.
pub fn to_assignment_space(x: &DVector<f64>, m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let pi = x.map(|v| (v + 1.0) / 2.0);
    let eta = DMatrix::from_fn(n, n, |i, j| (m[(i, j)] + x[i] + x[j] + 1.0) / 4.0);
    (pi, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::rectangle;
    use crate::model::{cluster_cost, distance_matrix, gram_matrix};
    use crate::relax::build_relaxation;

    fn psd_ok(p: &ConicProgram, values: &[f64]) -> bool {
        p.psd.iter().all(|c| {
            let mut m = DMatrix::zeros(c.order, c.order);
            for (i, j, e) in &c.entries {
                let v = e.constant
                    + e.terms.iter().map(|(var, co)| co * values[p.var_index(*var)]).sum::<f64>();
                m[(*i, *j)] = v;
                m[(*j, *i)] = v;
            }
            nalgebra::SymmetricEigen::new(m).eigenvalues.min() > -1e-9
        })
    }

    #[test]
    fn embedding_is_feasible_with_exact_cost() {
        let ds = rectangle(1.0, 2.0);
        let (d, w) = (distance_matrix(&ds), gram_matrix(&ds));
        let spec = CardinalitySpec::balanced(2, 2).unwrap();
        for (clusters, cost) in [(vec![vec![0, 1], vec![2, 3]], 1.0), (vec![vec![0, 3], vec![1, 2]], 4.0)] {
            let cl = Clustering::new(clusters, vec![]);
            assert!((cluster_cost(&ds, &cl, &spec).unwrap() - cost).abs() < 1e-12);
            for kind in [
                RelaxationKind::RLp,
                RelaxationKind::RSdp,
                RelaxationKind::RLpB,
                RelaxationKind::RSdpB,
                RelaxationKind::NaiveL,
            ] {
                let p = build_relaxation(kind, &d, &w, &spec).unwrap();
                let sol = embed_integral_for(kind, &cl, &spec).unwrap();
                let v = sol.values(&p);
                assert!(p.linear_violation(&v) <= 1e-12, "{kind}");
                assert!(psd_ok(&p, &v), "{kind}");
                assert!((p.evaluate_objective(&v) - cost).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn embedding_with_outliers() {
        let ds = crate::model::DataSet::new(vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![5.0, 0.0],
            vec![5.0, 1.0],
            vec![20.0, 20.0],
        ])
        .unwrap();
        let (d, w) = (distance_matrix(&ds), gram_matrix(&ds));
        let spec = CardinalitySpec::new(vec![2, 2], 1).unwrap();
        let cl = Clustering::new(vec![vec![0, 1], vec![2, 3]], vec![4]);
        let cost = cluster_cost(&ds, &cl, &spec).unwrap();
        for kind in [RelaxationKind::RLpO, RelaxationKind::RSdpO, RelaxationKind::RLpOb, RelaxationKind::RSdpOb] {
            let p = build_relaxation(kind, &d, &w, &spec).unwrap();
            let sol = embed_integral_for(kind, &cl, &spec).unwrap();
            let v = sol.values(&p);
            assert!(p.linear_violation(&v) <= 1e-12, "{kind}");
            assert!(psd_ok(&p, &v), "{kind}");
            assert!((p.evaluate_objective(&v) - cost).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn single_cluster_embedding() {
        let spec = CardinalitySpec::new(vec![3], 0).unwrap();
        let cl = Clustering::new(vec![vec![0, 1, 2]], vec![]);
        let sol = embed_integral(&cl, &spec).unwrap();
        assert!(sol.vectors[0].iter().all(|&v| v == 1.0));
        assert!(sol.matrices[0].iter().all(|&v| v == 1.0));
        let z = lift_to_pw(&sol, &spec).unwrap();
        assert!(z.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((z.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lift_of_integral_embedding_is_normalized_block_diagonal() {
        let spec = CardinalitySpec::new(vec![2, 3, 1], 0).unwrap();
        let cl = Clustering::new(vec![vec![0, 4], vec![1, 2, 5], vec![3]], vec![]);
        for kind in [RelaxationKind::RSdp, RelaxationKind::RLp] {
            let sol = embed_integral_for(kind, &cl, &spec).unwrap();
            let z = lift_to_pw(&sol, &spec).unwrap();
            let labels = cl.labels();
            for i in 0..6 {
                for j in 0..6 {
                    let expect = if labels[i] == labels[j] {
                        1.0 / spec.sizes()[labels[i].unwrap()] as f64
                    } else {
                        0.0
                    };
                    assert!((z[(i, j)] - expect).abs() < 1e-15);
                }
            }
            assert!(pw_feasibility(&z, 3, false).is_feasible(1e-12));
        }
        let spec = CardinalitySpec::balanced(3, 2).unwrap();
        let cl = Clustering::new(vec![vec![0, 4], vec![1, 2], vec![3, 5]], vec![]);
        let sol = embed_integral_for(RelaxationKind::RSdpB, &cl, &spec).unwrap();
        let z = lift_to_pw(&sol, &spec).unwrap();
        assert!(pw_feasibility(&z, 3, true).is_feasible(1e-12));
    }

    #[test]
    fn lift_rejects_infeasible_input() {
        let spec = CardinalitySpec::balanced(2, 2).unwrap();
        let cl = Clustering::new(vec![vec![0, 1], vec![2, 3]], vec![]);
        let mut sol = embed_integral(&cl, &spec).unwrap();
        sol.matrices[0][(0, 1)] = 0.3;
        assert!(matches!(lift_to_pw(&sol, &spec), Err(Error::Precondition { .. })));
    }

    #[test]
    fn assignment_space_examples() {
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let (pi, eta) = to_assignment_space(&x, &m);
        assert_eq!(pi.as_slice(), &[1.0, 0.0]);
        assert_eq!(eta, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let x = DVector::from_element(3, 1.0);
        let (pi, eta) = to_assignment_space(&x, &DMatrix::from_element(3, 3, 1.0));
        assert!(pi.iter().all(|&v| v == 1.0));
        assert!(eta.iter().all(|&v| v == 1.0));
    }
}
