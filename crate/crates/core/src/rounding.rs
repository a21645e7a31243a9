//! Deterministic rounding of relaxation optima into feasible clusterings.
//!
//! * [`round_general`] solves `R_LP`/`R_SDP`, assigns points to clusters by
//!   maximizing `sum pi_i^k x_i^k`, then performs one capacitated Lloyd step.
//! * [`round_balanced`] repeatedly solves the balanced relaxation on the
//!   remaining points and peels off the `n` points with the largest `x^1`.
//! * [`round_outlier`] peels the `n_0` points with the largest `x^0` as
//!   outliers and rounds the rest with one of the two schemes above.
//!
//! Ties in the sorting steps go to the smaller index.

use crate::error::{Error, Result};
use crate::model::{
    assign_to_centers, centroids, cluster_cost, distance_matrix, gram_matrix, solve_assignment_for_spec,
    CardinalitySpec, Clustering, DataSet,
};
use crate::relax::{build_relaxation, RelaxationKind, RelaxationSolution};
use crate::solver::{solve, SolverConfig, SolverStatus};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundingConfig {
    pub solver: SolverConfig,
    /// Append one capacitated Lloyd step to the balanced scheme.
    pub lloyd_pass: bool,
}

impl From<SolverConfig> for RoundingConfig {
    fn from(solver: SolverConfig) -> Self {
        Self { solver, lloyd_pass: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingResult {
    pub clustering: Clustering,
    /// Cost of `clustering`.
    pub upper_bound: f64,
    /// Objective of the relaxation over the full dataset.
    pub lower_bound: f64,
    /// `(UB - LB) / max(1, |LB|)`.
    pub gap: f64,
    pub provenance: RelaxationKind,
    /// Status of the full-data solve.
    pub status: SolverStatus,
    /// False when any relaxation solve stopped short of optimality; the
    /// lower bound is then not guaranteed.
    pub certified: bool,
    /// Number of relaxations solved.
    pub solves: usize,
    /// Clustering before the final Lloyd step, when one was applied.
    pub pre_lloyd: Option<Clustering>,
}

impl RoundingResult {
    fn new(
        clustering: Clustering,
        upper_bound: f64,
        lower_bound: f64,
        provenance: RelaxationKind,
        status: SolverStatus,
        certified: bool,
        solves: usize,
    ) -> Self {
        Self {
            clustering,
            upper_bound,
            lower_bound,
            gap: relative_gap(upper_bound, lower_bound),
            provenance,
            status,
            certified,
            solves,
            pre_lloyd: None,
        }
    }
}

pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    (ub - lb) / lb.abs().max(1.0)
}

fn solve_relaxation(data: &DataSet, spec: &CardinalitySpec, kind: RelaxationKind, cfg: &SolverConfig) -> Result<RelaxationSolution> {
    let program = build_relaxation(kind, &distance_matrix(data), &gram_matrix(data), spec)?;
    let sol = solve(&program, cfg)?;
    if !sol.status.has_iterate() {
        return Err(Error::Solver(format!("{kind} solve ended with status {}", sol.status)));
    }
    if !sol.status.is_optimal() {
        log::warn!("{kind} solve ended with status {}; rounding the best iterate", sol.status);
    }
    Ok(sol)
}

/// Indices sorted by decreasing value, ties by increasing index.
pub fn descending_order(x: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    idx
}

/// One capacitated Lloyd step: centroids of `clustering`, then the
/// size-constrained assignment to them.
pub fn lloyd_step(data: &DataSet, clustering: &Clustering, spec: &CardinalitySpec) -> Result<Clustering> {
    let centers = centroids(data, clustering)?;
    assign_to_centers(data, &centers, spec)
}

/// Rounding for general cluster sizes via `R_LP` or `R_SDP`.
pub fn round_general(
    data: &DataSet,
    spec: &CardinalitySpec,
    kind: RelaxationKind,
    config: &RoundingConfig,
) -> Result<RoundingResult> {
    if !matches!(kind, RelaxationKind::RLp | RelaxationKind::RSdp) {
        return Err(Error::SpecViolation(format!("general rounding needs R_LP or R_SDP, got {kind}")));
    }
    if spec.outlier_count() > 0 {
        return Err(Error::SpecViolation("general rounding does not handle outliers".into()));
    }
    spec.check_total(data.len())?;
    if spec.k() == 1 {
        let clustering = Clustering::new(vec![(0..data.len()).collect()], vec![]);
        let cost = cluster_cost(data, &clustering, spec)?;
        return Ok(RoundingResult::new(clustering, cost, cost, kind, SolverStatus::Optimal, true, 0));
    }
    let sol = solve_relaxation(data, spec, kind, &config.solver)?;
    let pairs = sol.cluster_pairs()?;
    // Maximizing sum pi x is minimizing sum pi (-x).
    let cost = DMatrix::from_fn(data.len(), spec.k(), |i, k| -pairs[k].0[i]);
    let first = solve_assignment_for_spec(&cost, spec)?;
    let clustering = lloyd_step(data, &first, spec)?;
    let ub = cluster_cost(data, &clustering, spec)?;
    let mut r = RoundingResult::new(clustering, ub, sol.objective, kind, sol.status, sol.status.is_optimal(), 1);
    r.pre_lloyd = Some(first);
    Ok(r)
}

/// Rounding for `K` clusters of `n` points via `R_LP_b` or `R_SDP_b`.
pub fn round_balanced(
    data: &DataSet,
    n: usize,
    k: usize,
    kind: RelaxationKind,
    config: &RoundingConfig,
) -> Result<RoundingResult> {
    if !matches!(kind, RelaxationKind::RLpB | RelaxationKind::RSdpB) {
        return Err(Error::SpecViolation(format!("balanced rounding needs R_LP_b or R_SDP_b, got {kind}")));
    }
    if n == 0 || k == 0 || n * k != data.len() {
        return Err(Error::SpecViolation(format!("{} points cannot form {k} clusters of {n}", data.len())));
    }
    let spec = CardinalitySpec::balanced(k, n)?;
    let mut remaining: Vec<usize> = (0..data.len()).collect();
    let mut clusters = Vec::with_capacity(k);
    let mut first: Option<(f64, SolverStatus)> = None;
    let mut certified = true;
    let mut solves = 0;
    for step in 0..k.saturating_sub(1) {
        let sub = data.subset(&remaining)?;
        let sub_spec = CardinalitySpec::balanced(k - step, n)?;
        let sol = solve_relaxation(&sub, &sub_spec, kind, &config.solver)?;
        solves += 1;
        certified &= sol.status.is_optimal();
        first.get_or_insert((sol.objective, sol.status));
        let order = descending_order(&sol.vectors[0]);
        let mut taken = vec![false; remaining.len()];
        let mut cluster = Vec::with_capacity(n);
        for &local in &order[..n] {
            taken[local] = true;
            cluster.push(remaining[local]);
        }
        clusters.push(cluster);
        remaining = remaining.iter().zip(&taken).filter(|(_, t)| !**t).map(|(&i, _)| i).collect();
    }
    clusters.push(remaining);
    let mut clustering = Clustering::new(clusters, vec![]);
    let mut pre_lloyd = None;
    if config.lloyd_pass && k > 1 {
        let next = lloyd_step(data, &clustering, &spec)?;
        pre_lloyd = Some(std::mem::replace(&mut clustering, next));
    }
    let ub = cluster_cost(data, &clustering, &spec)?;
    let (lb, status) = first.unwrap_or((ub, SolverStatus::Optimal));
    let mut r = RoundingResult::new(clustering, ub, lb, kind, status, certified, solves);
    r.pre_lloyd = pre_lloyd;
    Ok(r)
}

/// Joint outlier detection and clustering via the outlier relaxations. The
/// balanced kinds hand the residual points to [`round_balanced`], the
/// others to [`round_general`].
pub fn round_outlier(
    data: &DataSet,
    spec: &CardinalitySpec,
    kind: RelaxationKind,
    config: &RoundingConfig,
) -> Result<RoundingResult> {
    use RelaxationKind::*;
    let (residual_kind, balanced) = match kind {
        RLpO => (RLp, false),
        RSdpO => (RSdp, false),
        RLpOb => (RLpB, true),
        RSdpOb => (RSdpB, true),
        _ => return Err(Error::SpecViolation(format!("outlier rounding needs an outlier relaxation, got {kind}"))),
    };
    spec.check_total(data.len())?;
    if balanced && !spec.is_balanced() {
        return Err(Error::SpecViolation(format!("{kind} requires equal cluster sizes")));
    }
    let n0 = spec.outlier_count();
    let inner_spec = spec.without_outliers();
    let inner = |sub: &DataSet| {
        if balanced {
            round_balanced(sub, inner_spec.sizes()[0], inner_spec.k(), residual_kind, config)
        } else {
            round_general(sub, &inner_spec, residual_kind, config)
        }
    };
    if n0 == 0 {
        return inner(data);
    }
    let sol = solve_relaxation(data, spec, kind, &config.solver)?;
    let (x0, _) = sol.outlier_pair().ok_or_else(|| Error::Solver("missing outlier block".into()))?;
    let order = descending_order(&x0);
    let outliers: Vec<usize> = order[..n0].to_vec();
    let mut is_out = vec![false; data.len()];
    outliers.iter().for_each(|&i| is_out[i] = true);
    let kept: Vec<usize> = (0..data.len()).filter(|&i| !is_out[i]).collect();
    let sub = data.subset(&kept)?;
    let r = inner(&sub)?;
    let clustering = r.clustering.remap(&kept).with_outliers(outliers);
    let ub = cluster_cost(data, &clustering, spec)?;
    let certified = sol.status.is_optimal() && r.certified;
    let mut out = RoundingResult::new(clustering, ub, sol.objective, kind, sol.status, certified, r.solves + 1);
    out.pre_lloyd = r.pre_lloyd.map(|c| c.remap(&kept).with_outliers(out.clustering.outliers().to_vec()));
    Ok(out)
}

/// Dispatches on the relaxation kind.
pub fn round(data: &DataSet, spec: &CardinalitySpec, kind: RelaxationKind, config: &RoundingConfig) -> Result<RoundingResult> {
    use RelaxationKind::*;
    match kind {
        RLp | RSdp => round_general(data, spec, kind, config),
        RLpB | RSdpB => {
            if spec.outlier_count() > 0 || !spec.is_balanced() {
                return Err(Error::SpecViolation(format!("{kind} requires equal sizes and no outliers")));
            }
            round_balanced(data, spec.sizes()[0], spec.k(), kind, config)
        }
        RLpO | RSdpO | RLpOb | RSdpOb => round_outlier(data, spec, kind, config),
        _ => Err(Error::SpecViolation(format!("{kind} has no rounding scheme"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::rectangle;

    fn line(xs: &[f64]) -> DataSet {
        DataSet::new(xs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    #[test]
    fn general_rounding_on_rectangle() {
        let data = rectangle(1.0, 2.0);
        let spec = CardinalitySpec::balanced(2, 2).unwrap();
        for kind in [RelaxationKind::RLp, RelaxationKind::RSdp] {
            let r = round_general(&data, &spec, kind, &RoundingConfig::default()).unwrap();
            assert_eq!(r.clustering.clusters().len(), 2);
            assert!((r.upper_bound - 1.0).abs() < 1e-9, "{kind}: {}", r.upper_bound);
            assert!(r.lower_bound <= r.upper_bound + 1e-6);
            let mut cl = r.clustering.clusters().to_vec();
            cl.sort();
            assert_eq!(cl, vec![vec![0, 1], vec![2, 3]]);
        }
    }

    #[test]
    fn single_cluster_is_trivial() {
        let data = line(&[0.0, 1.0, 5.0]);
        let spec = CardinalitySpec::new(vec![3], 0).unwrap();
        let r = round_general(&data, &spec, RelaxationKind::RLp, &RoundingConfig::default()).unwrap();
        assert_eq!(r.upper_bound, r.lower_bound);
        assert!((r.upper_bound - cluster_cost(&data, &r.clustering, &spec).unwrap()).abs() < 1e-15);
        assert_eq!(r.solves, 0);
    }

    #[test]
    fn step_six_is_a_fixed_point() {
        let data = line(&[0.0, 0.4, 1.1, 3.0, 3.2, 7.5, 8.0]);
        let spec = CardinalitySpec::new(vec![3, 2, 2], 0).unwrap();
        let r = round_general(&data, &spec, RelaxationKind::RLp, &RoundingConfig::default()).unwrap();
        let pre = r.pre_lloyd.clone().unwrap();
        assert_eq!(lloyd_step(&data, &pre, &spec).unwrap(), r.clustering);
        r.clustering.validate(data.len(), &spec).unwrap();
    }

    #[test]
    fn balanced_rounding_on_rectangle() {
        let data = rectangle(1.0, 2.0);
        for kind in [RelaxationKind::RLpB, RelaxationKind::RSdpB] {
            let r = round_balanced(&data, 2, 2, kind, &RoundingConfig::default()).unwrap();
            assert_eq!(r.clustering.clusters(), &[vec![0, 1], vec![2, 3]]);
            assert!((r.upper_bound - 1.0).abs() < 1e-12);
            assert!((r.lower_bound - 1.0).abs() < 1e-5);
        }
        assert!(matches!(
            round_balanced(&data, 3, 2, RelaxationKind::RLpB, &RoundingConfig::default()),
            Err(Error::SpecViolation(_))
        ));
    }

    #[test]
    fn ordering_breaks_ties_by_index() {
        let x = DVector::from_vec(vec![0.5, 1.0, 0.5, 1.0, -1.0]);
        assert_eq!(descending_order(&x), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn all_but_k_points_as_outliers_costs_nothing() {
        let data = line(&[0.0, 1.5, 4.0, 4.5, 9.0]);
        let spec = CardinalitySpec::new(vec![1, 1], 3).unwrap();
        for kind in [RelaxationKind::RLpO, RelaxationKind::RLpOb] {
            let r = round_outlier(&data, &spec, kind, &RoundingConfig::default()).unwrap();
            r.clustering.validate(5, &spec).unwrap();
            assert!(r.upper_bound.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_outliers_delegate() {
        let data = line(&[0.0, 0.3, 5.0, 5.2, 5.1, 0.1]);
        let spec = CardinalitySpec::new(vec![3, 3], 0).unwrap();
        let cfg = RoundingConfig::default();
        let a = round_outlier(&data, &spec, RelaxationKind::RLpO, &cfg).unwrap();
        let b = round_general(&data, &spec, RelaxationKind::RLp, &cfg).unwrap();
        assert_eq!(a, b);
        let a = round_outlier(&data, &spec, RelaxationKind::RLpOb, &cfg).unwrap();
        let b = round_balanced(&data, 3, 2, RelaxationKind::RLpB, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outliers_are_peeled_first() {
        let data = line(&[0.0, 0.2, 0.1, 10.0, 10.1, 10.2, 50.0]);
        let spec = CardinalitySpec::new(vec![3, 3], 1).unwrap();
        let r = round_outlier(&data, &spec, RelaxationKind::RLpOb, &RoundingConfig::default()).unwrap();
        assert_eq!(r.clustering.outliers(), &[6]);
        assert!((r.upper_bound - r.lower_bound).abs() < 1e-6 * (1.0 + r.upper_bound));
    }
}
