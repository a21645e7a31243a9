//! Exact optimum of small instances by exhaustive enumeration.
//!
//! Points are assigned in index order. A point may open an empty cluster
//! only if no earlier cluster of the same size is still empty, which removes
//! the label symmetry among equal-size clusters. The pairwise cost is
//! accumulated incrementally; a branch whose partial cost already
//! exceeds the incumbent is cut (partial costs only grow).
//!
//! Leaves are visited in lexicographic order of their label vectors
//! (outliers labelled after every cluster), and an incumbent is replaced
//! only by a strictly cheaper leaf, so the reported optimum is the
//! lexicographically smallest among optimal canonical clusterings.

use crate::error::{Error, Result};
use crate::model::{cluster_cost, distance_matrix, CardinalitySpec, Clustering, DataSet, DistanceMatrix};
use serde::Serialize;

/// Default limit on the number of canonical partitions.
pub const DEFAULT_PARTITION_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub clustering: Clustering,
    pub cost: f64,
    /// Number of canonical partitions in the search space.
    pub partitions: u128,
    /// Complete partitions actually evaluated (the rest were cut).
    pub leaves: u64,
}

/// Number of partitions after removing label symmetry among equal-size
/// clusters; `None` on overflow.
pub fn partition_count(spec: &CardinalitySpec) -> Option<u128> {
    let mut remaining = spec.total() as u128;
    let mut count: u128 = 1;
    let mut groups: Vec<usize> = spec.sizes().to_vec();
    groups.push(spec.outlier_count());
    for &g in &groups {
        count = count.checked_mul(binomial(remaining, g as u128)?)?;
        remaining -= g as u128;
    }
    let mut sizes = spec.sizes().to_vec();
    sizes.sort_unstable();
    let mut i = 0;
    while i < sizes.len() {
        let j = sizes[i..].iter().take_while(|&&s| s == sizes[i]).count();
        count /= (1..=j as u128).product::<u128>();
        i += j;
    }
    Some(count)
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.checked_mul(n - i)? / (i + 1);
    }
    Some(r)
}

pub fn enumerate_optimal(data: &DataSet, spec: &CardinalitySpec) -> Result<OracleResult> {
    enumerate_optimal_with_cap(data, spec, DEFAULT_PARTITION_CAP)
}

pub fn enumerate_optimal_with_cap(data: &DataSet, spec: &CardinalitySpec, cap: u128) -> Result<OracleResult> {
    spec.check_total(data.len())?;
    let partitions = match partition_count(spec) {
        Some(c) if c <= cap => c,
        other => {
            return Err(Error::ResourceLimit(format!(
                "{} partitions exceed the enumeration cap of {cap}",
                other.map_or_else(|| "too many".to_string(), |c| c.to_string())
            )))
        }
    };
    let dist = distance_matrix(data);
    let k = spec.k();
    let mut caps = spec.sizes().to_vec();
    caps.push(spec.outlier_count());
    let mut search = Search {
        dist: &dist,
        caps: &caps,
        k,
        members: vec![Vec::new(); k + 1],
        labels: vec![0; data.len()],
        best: f64::INFINITY,
        best_labels: None,
        leaves: 0,
    };
    search.descend(0, 0.0);
    let labels = search.best_labels.expect("a feasible spec has at least one partition");
    let leaves = search.leaves;
    let labels: Vec<Option<usize>> = labels.iter().map(|&l| (l < k).then_some(l)).collect();
    let clustering = Clustering::from_labels(&labels, k)?;
    let cost = cluster_cost(data, &clustering, spec)?;
    Ok(OracleResult { clustering, cost, partitions, leaves })
}

struct Search<'a> {
    dist: &'a DistanceMatrix,
    /// Capacities of clusters `0..k` followed by the outlier group.
    caps: &'a [usize],
    k: usize,
    members: Vec<Vec<usize>>,
    labels: Vec<usize>,
    best: f64,
    best_labels: Option<Vec<usize>>,
    leaves: u64,
}

impl Search<'_> {
    fn tolerance(&self) -> f64 {
        1e-12 * (1.0 + self.best.abs())
    }

    fn descend(&mut self, i: usize, partial: f64) {
        if partial > self.best + self.tolerance() {
            return;
        }
        if i == self.labels.len() {
            self.leaves += 1;
            if self.best_labels.is_none() || partial < self.best - self.tolerance() {
                self.best = partial;
                self.best_labels = Some(self.labels.clone());
            }
            return;
        }
        for c in 0..=self.k {
            if self.members[c].len() == self.caps[c] {
                continue;
            }
            // Canonical form: only the first empty cluster of a size class may open.
            if c < self.k
                && self.members[c].is_empty()
                && (0..c).any(|e| self.caps[e] == self.caps[c] && self.members[e].is_empty())
            {
                continue;
            }
            // Pairwise form: cluster c contributes sum_{i<j} d_ij / n_c.
            let mut next = partial;
            if c < self.k {
                let added: f64 = self.members[c].iter().map(|&j| self.dist.get(i, j)).sum();
                next += added / self.caps[c] as f64;
            }
            self.members[c].push(i);
            self.labels[i] = c;
            self.descend(i + 1, next);
            self.members[c].pop();
        }
    }
}
