//! Data types and exact primitives shared by every other module.
//!
//! Indices are zero-based throughout. A [`Clustering`] is an ordered
//! partition `(I_1, ..., I_K)` plus an optional outlier set `I_0`, and a
//! [`CardinalitySpec`] prescribes the sizes `n_1, ..., n_K` and `n_0`.

mod assignment;
mod voronoi;

pub use assignment::{solve_assignment, solve_assignment_for_spec, Assignment};
pub use voronoi::{check_voronoi_compatibility, PairSeparation, VoronoiReport};

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// `N` points in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    n: usize,
    d: usize,
    coords: Vec<f64>,
}

impl DataSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no points".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("points have dimension 0".into()));
        }
        let mut coords = Vec::with_capacity(n * d);
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::InvalidInput(format!(
                    "point {i} has {} coordinates, expected {d}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(n, d, coords)
    }

    /// Builds a dataset from row-major coordinates.
    pub fn from_flat(n: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("dataset must have N >= 1 and d >= 1".into()));
        }
        if coords.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                n * d,
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate at point {}, feature {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, coords })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The sub-dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidInput(format!("index {i} out of range")));
            }
            coords.extend_from_slice(self.point(i));
        }
        Self::from_flat(indices.len(), self.d, coords)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distances `d_ij = ||xi_i - xi_j||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Restriction to the given indices.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self(DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.0[(idx[a], idx[b])]))
    }
}

/// Inner products `w_ij = xi_i^T xi_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Wraps an arbitrary symmetric matrix, e.g. a synthetic Gram matrix.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput("Gram matrix must be square".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gram matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self(DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.0[(idx[a], idx[b])]))
    }
}

pub fn distance_matrix(data: &DataSet) -> DistanceMatrix {
    let n = data.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(data.point(i), data.point(j));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    DistanceMatrix(m)
}

pub fn gram_matrix(data: &DataSet) -> GramMatrix {
    let n = data.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = data.point(i).iter().zip(data.point(j)).map(|(a, b)| a * b).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    GramMatrix(m)
}

/// Prescribed cluster sizes `n_1..n_K` and outlier count `n_0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardinalitySpec {
    sizes: Vec<usize>,
    outlier_count: usize,
}

impl CardinalitySpec {
    /// Zero cluster sizes are rejected.
    pub fn new(sizes: Vec<usize>, outlier_count: usize) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::SpecViolation("at least one cluster is required".into()));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::SpecViolation(format!("cluster {k} has prescribed size 0")));
        }
        Ok(Self { sizes, outlier_count })
    }

    pub fn balanced(k: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; k], 0)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier_count
    }

    /// `n_0 + sum_k n_k`.
    pub fn total(&self) -> usize {
        self.outlier_count + self.sizes.iter().sum::<usize>()
    }

    pub fn is_balanced(&self) -> bool {
        self.sizes.windows(2).all(|w| w[0] == w[1])
    }

    /// The same cluster sizes without outliers.
    pub fn without_outliers(&self) -> Self {
        Self { sizes: self.sizes.clone(), outlier_count: 0 }
    }

    pub fn check_total(&self, n: usize) -> Result<()> {
        if self.total() != n {
            return Err(Error::SpecViolation(format!(
                "sizes sum to {} but the dataset has {n} points",
                self.total()
            )));
        }
        Ok(())
    }
}

/// An ordered partition into `K` clusters plus an outlier set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    clusters: Vec<Vec<usize>>,
    outliers: Vec<usize>,
}

impl Clustering {
    /// Index lists are sorted on construction.
    pub fn new(mut clusters: Vec<Vec<usize>>, mut outliers: Vec<usize>) -> Self {
        for c in &mut clusters {
            c.sort_unstable();
        }
        outliers.sort_unstable();
        Self { clusters, outliers }
    }

    /// Labels in `0..K` are clusters; `None` marks an outlier.
    pub fn from_labels(labels: &[Option<usize>], k: usize) -> Result<Self> {
        let mut clusters = vec![Vec::new(); k];
        let mut outliers = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            match l {
                Some(c) if *c < k => clusters[*c].push(i),
                Some(c) => {
                    return Err(Error::InvalidInput(format!("label {c} out of range for K={k}")))
                }
                None => outliers.push(i),
            }
        }
        Ok(Self { clusters, outliers })
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn outliers(&self) -> &[usize] {
        &self.outliers
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_points(&self) -> usize {
        self.outliers.len() + self.clusters.iter().map(Vec::len).sum::<usize>()
    }

    /// Per-point labels; `None` for outliers. Panics if the clustering is not a partition.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_points()];
        for (k, c) in self.clusters.iter().enumerate() {
            for &i in c {
                out[i] = Some(k);
            }
        }
        out
    }

    /// Checks that the sets partition `0..n` with the prescribed cardinalities.
    pub fn validate(&self, n: usize, spec: &CardinalitySpec) -> Result<()> {
        if self.clusters.len() != spec.k() {
            return Err(Error::SpecViolation(format!(
                "clustering has {} clusters, spec has {}",
                self.clusters.len(),
                spec.k()
            )));
        }
        for (k, (c, &size)) in self.clusters.iter().zip(spec.sizes()).enumerate() {
            if c.len() != size {
                return Err(Error::SpecViolation(format!(
                    "cluster {k} has {} points, expected {size}",
                    c.len()
                )));
            }
        }
        if self.outliers.len() != spec.outlier_count() {
            return Err(Error::SpecViolation(format!(
                "{} outliers, expected {}",
                self.outliers.len(),
                spec.outlier_count()
            )));
        }
        let mut seen = vec![false; n];
        for &i in self.clusters.iter().flatten().chain(&self.outliers) {
            if i >= n {
                return Err(Error::SpecViolation(format!("index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::SpecViolation(format!("index {i} assigned twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::SpecViolation(format!("index {i} not assigned")));
        }
        Ok(())
    }

    /// Maps local indices through `idx` (used when a clustering of a
    /// sub-dataset is lifted back to the parent dataset).
    pub fn remap(&self, idx: &[usize]) -> Self {
        Self::new(
            self.clusters.iter().map(|c| c.iter().map(|&i| idx[i]).collect()).collect(),
            self.outliers.iter().map(|&i| idx[i]).collect(),
        )
    }

    pub fn with_outliers(mut self, mut outliers: Vec<usize>) -> Self {
        outliers.sort_unstable();
        self.outliers = outliers;
        self
    }
}

/// One center per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centers(pub Vec<Vec<f64>>);

impl Centers {
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.0[k]
    }
}

pub fn centroids(data: &DataSet, clustering: &Clustering) -> Result<Centers> {
    let d = data.dim();
    let mut out = Vec::with_capacity(clustering.k());
    for (k, c) in clustering.clusters().iter().enumerate() {
        if c.is_empty() {
            return Err(Error::DegenerateCluster(k));
        }
        let mut mean = vec![0.0; d];
        for &i in c {
            for (m, v) in mean.iter_mut().zip(data.point(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / c.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        out.push(mean);
    }
    Ok(Centers(out))
}

/// Sum of squared distances to the cluster means; outliers contribute nothing.
pub fn cluster_cost(data: &DataSet, clustering: &Clustering, spec: &CardinalitySpec) -> Result<f64> {
    clustering.validate(data.len(), spec)?;
    let centers = centroids(data, clustering)?;
    Ok(centroid_form_cost(data, clustering, &centers))
}

pub(crate) fn centroid_form_cost(data: &DataSet, clustering: &Clustering, centers: &Centers) -> f64 {
    clustering
        .clusters()
        .iter()
        .zip(&centers.0)
        .map(|(c, z)| c.iter().map(|&i| sq_dist(data.point(i), z)).sum::<f64>())
        .sum()
}

/// The pairwise form `sum_k (1 / 2n_k) sum_{i,j in I_k} d_ij` of the same cost.
pub fn pairwise_cost(dist: &DistanceMatrix, clustering: &Clustering) -> f64 {
    clustering
        .clusters()
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let mut s = 0.0;
            for (a, &i) in c.iter().enumerate() {
                for &j in &c[a + 1..] {
                    s += dist.get(i, j);
                }
            }
            s / c.len() as f64
        })
        .sum()
}

/// Cost of assigning every point to every center: `||xi_i - zeta_k||^2`.
pub fn center_costs(data: &DataSet, centers: &Centers) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), centers.k(), |i, k| sq_dist(data.point(i), centers.center(k)))
}

/// Capacitated nearest-center assignment: minimizes the total squared
/// distance to the given centers subject to the cluster sizes of `spec`
/// (outliers are not assigned).
pub fn assign_to_centers(data: &DataSet, centers: &Centers, spec: &CardinalitySpec) -> Result<Clustering> {
    if centers.k() != spec.k() {
        return Err(Error::SpecViolation(format!("{} centers for {} clusters", centers.k(), spec.k())));
    }
    solve_assignment_for_spec(&center_costs(data, centers), &spec.without_outliers())
}
