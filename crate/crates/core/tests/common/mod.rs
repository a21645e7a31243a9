//! Reference computations written independently of the library code.
#![allow(dead_code)]

use ccmeans_core::{CardinalitySpec, Clustering, DataSet};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of the members of `set` to their mean.
pub fn centroid_cost(data: &DataSet, set: &[usize]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let d = data.dim();
    let mut mean = vec![0.0; d];
    for &i in set {
        for (m, v) in mean.iter_mut().zip(data.point(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= set.len() as f64);
    set.iter().map(|&i| sq(data.point(i), &mean)).sum()
}

pub fn partition_cost(data: &DataSet, clusters: &[Vec<usize>]) -> f64 {
    clusters.iter().map(|c| centroid_cost(data, c)).sum()
}

/// Optimum over every label vector in `{0..K, outlier}^N` with the
/// prescribed counts.
pub fn brute_force_optimum(data: &DataSet, spec: &CardinalitySpec) -> f64 {
    let n = data.len();
    let k = spec.k();
    let groups = k + usize::from(spec.outlier_count() > 0);
    let mut caps: Vec<usize> = spec.sizes().to_vec();
    if spec.outlier_count() > 0 {
        caps.push(spec.outlier_count());
    }
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    fn rec(
        i: usize,
        data: &DataSet,
        labels: &mut Vec<usize>,
        counts: &mut Vec<usize>,
        caps: &[usize],
        k: usize,
        best: &mut f64,
    ) {
        if i == labels.len() {
            let mut clusters = vec![Vec::new(); k];
            for (p, &l) in labels.iter().enumerate() {
                if l < k {
                    clusters[l].push(p);
                }
            }
            *best = best.min(partition_cost(data, &clusters));
            return;
        }
        for g in 0..caps.len() {
            if counts[g] < caps[g] {
                counts[g] += 1;
                labels[i] = g;
                rec(i + 1, data, labels, counts, caps, k, best);
                counts[g] -= 1;
            }
        }
    }
    let mut counts = vec![0; groups];
    rec(0, data, &mut labels, &mut counts, &caps, k, &mut best);
    best
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> DataSet {
    DataSet::new((0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..scale)).collect()).collect()).unwrap()
}

/// Random composition of `n` into `k` positive parts.
pub fn random_sizes(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(k - 1).collect();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(n)) {
        sizes.push(c - prev);
        prev = c;
    }
    sizes
}

/// Clusters as a sorted list of sorted member lists, plus sorted outliers.
pub fn canonical(c: &Clustering) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut cl: Vec<Vec<usize>> = c
        .clusters()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.sort_unstable();
            m
        })
        .collect();
    cl.sort();
    let mut out = c.outliers().to_vec();
    out.sort_unstable();
    (cl, out)
}

pub fn same_partition(a: &Clustering, b: &Clustering) -> bool {
    canonical(a) == canonical(b)
}

pub fn iris() -> (DataSet, Vec<usize>) {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/iris.csv")).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        pts.push(f[..4].iter().map(|v| v.parse().unwrap()).collect());
        labels.push(f[4].parse().unwrap());
    }
    (DataSet::new(pts).unwrap(), labels)
}

/// Symmetric matrix with unit row sums and nonnegative entries: a convex
/// combination of symmetrized permutation matrices.
pub fn random_symmetric_stochastic(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let terms = rng.random_range(1..6);
    let weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut z = DMatrix::zeros(n, n);
    for w in weights {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, &j) in perm.iter().enumerate() {
            z[(i, j)] += 0.5 * w / total;
            z[(j, i)] += 0.5 * w / total;
        }
    }
    z
}

pub fn rectangle(a: f64, b: f64) -> DataSet {
    DataSet::new(vec![vec![0.0, 0.0], vec![a, 0.0], vec![a, b], vec![0.0, b]]).unwrap()
}

/// `<A, B>` for square matrices.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}
