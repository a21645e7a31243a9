//! Local-search baseline: capacitated Lloyd iterations in the style of
//! Bennett, Bradley and Demiriz, seeded by k-means++.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), which is portable and
//! reproducible across platforms. Run `r` of a multi-start with base seed
//! `s` uses the stream seeded by `s + r`.

use crate::error::{Error, Result};
use crate::model::{assign_to_centers, centroids, cluster_cost, CardinalitySpec, Centers, Clustering, DataSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Iteration cap used by [`multistart_bennett`].
pub const DEFAULT_MAX_ITERS: usize = 100;

/// k-means++ seeding: the first center is a uniformly random point, each
/// further one is drawn with probability proportional to its squared
/// distance to the nearest chosen center. When every unchosen point sits on
/// a chosen center the draw falls back to uniform among unchosen points.
pub fn kmeanspp_centers(data: &DataSet, k: usize, seed: u64) -> Result<Centers> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::SpecViolation(format!("cannot seed {k} centers from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    picks.push(first);
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data.point(i), data.point(first))).collect();
    while picks.len() < k {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| nearest[i]).sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i] && nearest[i] > 0.0) {
                pick = Some(i);
                if u < nearest[i] {
                    break;
                }
                u -= nearest[i];
            }
            pick.expect("positive total implies a candidate")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        picks.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(data.point(i), data.point(next)));
        }
    }
    Ok(Centers(picks.iter().map(|&i| data.point(i).to_vec()).collect()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Centers did not move.
    CentersFixed,
    /// An assignment seen before came back (tie-induced cycling).
    Repeated,
    /// The iteration cap was reached.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BennettResult {
    pub clustering: Clustering,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Cost after each iteration.
    pub cost_history: Vec<f64>,
}

/// Alternates the capacitated assignment to the current centers with the
/// centroid update until the centers stop moving.
pub fn bennett(data: &DataSet, spec: &CardinalitySpec, init: &Centers, max_iters: usize) -> Result<BennettResult> {
    if spec.outlier_count() > 0 {
        return Err(Error::SpecViolation("the local search does not handle outliers".into()));
    }
    spec.check_total(data.len())?;
    if init.k() != spec.k() {
        return Err(Error::SpecViolation(format!("{} initial centers for {} clusters", init.k(), spec.k())));
    }
    if max_iters == 0 {
        return Err(Error::Config("iteration cap must be at least 1".into()));
    }
    let mut centers = init.clone();
    let mut seen: Vec<Clustering> = Vec::new();
    let mut history = Vec::new();
    let mut stop = StopReason::IterationLimit;
    let mut clustering = None;
    for _ in 0..max_iters {
        let assigned = assign_to_centers(data, &centers, spec)?;
        let next = centroids(data, &assigned)?;
        history.push(cluster_cost(data, &assigned, spec)?);
        let repeated = seen.contains(&assigned);
        let fixed = next == centers;
        seen.push(assigned.clone());
        clustering = Some(assigned);
        centers = next;
        if fixed {
            stop = StopReason::CentersFixed;
            break;
        }
        if repeated {
            stop = StopReason::Repeated;
            break;
        }
    }
    let clustering = clustering.expect("at least one iteration");
    Ok(BennettResult {
        cost: *history.last().expect("at least one iteration"),
        iterations: history.len(),
        converged: stop != StopReason::IterationLimit,
        stop,
        clustering,
        cost_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiStartReport {
    pub best: Clustering,
    pub best_cost: f64,
    pub costs: Vec<f64>,
    /// Population standard deviation of `costs` over their mean (0 when the
    /// mean is 0).
    pub cv: f64,
    pub runs: usize,
    pub seed: u64,
    pub converged_runs: usize,
}

/// Best of `runs` independent local searches; ties between equal best costs
/// go to the earliest run.
pub fn multistart_bennett(data: &DataSet, spec: &CardinalitySpec, runs: usize, seed: u64) -> Result<MultiStartReport> {
    if runs == 0 {
        return Err(Error::Config("at least one run is required".into()));
    }
    let mut results = Vec::with_capacity(runs);
    for r in 0..runs {
        let init = kmeanspp_centers(data, spec.k(), seed.wrapping_add(r as u64))?;
        results.push(bennett(data, spec, &init, DEFAULT_MAX_ITERS)?);
    }
    let costs: Vec<f64> = results.iter().map(|r| r.cost).collect();
    let best_idx = (0..runs).fold(0, |b, i| if costs[i] < costs[b] { i } else { b });
    Ok(MultiStartReport {
        best: results[best_idx].clustering.clone(),
        best_cost: costs[best_idx],
        cv: coefficient_of_variation(&costs),
        converged_runs: results.iter().filter(|r| r.converged).count(),
        costs,
        runs,
        seed,
    })
}

pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}
