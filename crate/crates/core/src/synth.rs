//! Synthetic instances with planted clusterings, plus feature standardization.
//!
//! All generators draw from ChaCha8 seeded by the caller, so an instance is
//! a pure function of its arguments.

use crate::error::{Error, Result};
use crate::model::{distance_matrix, CardinalitySpec, Clustering, DataSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::io::Write;

/// Realized separation of a planted clustering, in squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationCertificate {
    /// Largest within-cluster `d_ij`.
    pub max_intra: f64,
    /// Smallest `d_ij` between points of different clusters (infinite for `K = 1`).
    pub min_inter: f64,
    /// Smallest `d_ij` from an outlier to any other point (infinite without outliers).
    pub min_outlier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedInstance {
    pub dataset: DataSet,
    pub planted: Clustering,
    pub spec: CardinalitySpec,
    pub certificate: SeparationCertificate,
    /// Balanced, outlier-free, and every cluster diameter below every
    /// inter-cluster distance.
    pub satisfies_s: bool,
    /// Balanced, and every cluster diameter below every inter-cluster
    /// distance and every outlier-to-point distance.
    pub satisfies_s_prime: bool,
}

impl PlantedInstance {
    fn new(dataset: DataSet, planted: Clustering) -> Self {
        let sizes: Vec<usize> = planted.clusters().iter().map(Vec::len).collect();
        let spec = CardinalitySpec::new(sizes, planted.outliers().len()).expect("generators plant non-empty clusters");
        let certificate = separation_certificate(&dataset, &planted);
        let separated = spec.is_balanced() && certificate.max_intra < certificate.min_inter;
        Self {
            satisfies_s: separated && spec.outlier_count() == 0,
            satisfies_s_prime: separated && certificate.max_intra < certificate.min_outlier,
            dataset,
            planted,
            spec,
            certificate,
        }
    }

    /// CSV with columns `x0..x{d-1},label`; outliers are labelled `-1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dataset.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for (i, label) in self.planted.labels().iter().enumerate() {
            let mut row: Vec<String> = self.dataset.point(i).iter().map(|v| format!("{v:?}")).collect();
            row.push(label.map_or_else(|| "-1".to_string(), |l| l.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Computes the certificate from the realized squared distances.
pub fn separation_certificate(data: &DataSet, clustering: &Clustering) -> SeparationCertificate {
    let d = distance_matrix(data);
    let labels = clustering.labels();
    let mut cert =
        SeparationCertificate { max_intra: 0.0, min_inter: f64::INFINITY, min_outlier: f64::INFINITY };
    for i in 0..data.len() {
        for j in (i + 1)..data.len() {
            let v = d.get(i, j);
            match (labels[i], labels[j]) {
                (Some(a), Some(b)) if a == b => cert.max_intra = cert.max_intra.max(v),
                (Some(_), Some(_)) => cert.min_inter = cert.min_inter.min(v),
                _ => cert.min_outlier = cert.min_outlier.min(v),
            }
        }
    }
    cert
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / dim as f64);
            return g.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

/// Vertices of a regular simplex with pairwise distance `delta`, embedded in
/// the first `k - 1` of `dim` coordinates (Helmert basis of `1^perp`).
fn simplex_centers(k: usize, delta: f64, dim: usize) -> Vec<Vec<f64>> {
    let scale = delta / std::f64::consts::SQRT_2;
    (0..k)
        .map(|c| {
            let mut v = vec![0.0; dim];
            for j in 1..k {
                let norm = ((j * (j + 1)) as f64).sqrt();
                // Helmert vector h_j: 1 on the first j entries, -j on entry j.
                let coord = if c < j {
                    1.0
                } else if c == j {
                    -(j as f64)
                } else {
                    0.0
                };
                v[j - 1] = scale * coord / norm;
            }
            v
        })
        .collect()
}

/// Points drawn uniformly from unit balls whose centers form a regular
/// simplex with pairwise distance `delta`.
pub fn generate_stochastic_balls(sizes: &[usize], delta: f64, dim: usize, seed: u64) -> Result<PlantedInstance> {
    let k = sizes.len();
    if k == 0 || sizes.contains(&0) {
        return Err(Error::SpecViolation("cluster sizes must be positive".into()));
    }
    if dim == 0 || dim + 1 < k {
        return Err(Error::SpecViolation(format!("{k} simplex centers need dimension at least {}", k - 1)));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidInput(format!("invalid center distance {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = simplex_centers(k, delta, dim);
    let mut points = Vec::new();
    let mut clusters = Vec::with_capacity(k);
    for (c, &size) in sizes.iter().enumerate() {
        let mut members = Vec::with_capacity(size);
        for _ in 0..size {
            let u = uniform_in_ball(&mut rng, dim);
            members.push(points.len());
            points.push(u.iter().zip(&centers[c]).map(|(a, b)| a + b).collect());
        }
        clusters.push(members);
    }
    Ok(PlantedInstance::new(DataSet::new(points)?, Clustering::new(clusters, vec![])))
}

/// An instance that satisfies the perfect-separation assumptions by
/// construction: `k` clusters of `n` points sampled in unit balls, centers
/// spaced so that every cross-cluster distance is at least
/// `margin * D + 1` where `D` is the largest realized cluster diameter,
/// and `n0` outliers at least that far from every other point.
pub fn generate_separated_instance(
    k: usize,
    n: usize,
    n0: usize,
    dim: usize,
    margin: f64,
    seed: u64,
) -> Result<PlantedInstance> {
    if k == 0 || n == 0 || dim == 0 {
        return Err(Error::SpecViolation("need at least one cluster, point and dimension".into()));
    }
    if !(margin > 1.0 && margin.is_finite()) {
        return Err(Error::InvalidInput(format!("margin must exceed 1, got {margin}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local: Vec<Vec<Vec<f64>>> =
        (0..k).map(|_| (0..n).map(|_| uniform_in_ball(&mut rng, dim)).collect()).collect();
    let diameter = local
        .iter()
        .flat_map(|c| c.iter().enumerate().flat_map(move |(a, p)| c[a + 1..].iter().map(move |q| euclid(p, q))))
        .fold(0.0, f64::max);
    let gap = margin * diameter + 1.0;
    // Unit balls: cross distances are at least the center spacing minus 2.
    let spacing = gap + 2.0;
    let centers: Vec<Vec<f64>> = if dim >= 2 && k >= 3 {
        let radius = spacing / (2.0 * (std::f64::consts::PI / k as f64).sin());
        (0..k)
            .map(|c| {
                let t = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                let mut v = vec![0.0; dim];
                v[0] = radius * t.cos();
                v[1] = radius * t.sin();
                v
            })
            .collect()
    } else {
        (0..k)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[0] = spacing * c as f64;
                v
            })
            .collect()
    };
    let mut points = Vec::with_capacity(k * n + n0);
    let mut clusters = Vec::with_capacity(k);
    for (c, members) in local.iter().enumerate() {
        let mut idx = Vec::with_capacity(n);
        for p in members {
            idx.push(points.len());
            points.push(p.iter().zip(&centers[c]).map(|(a, b)| a + b).collect::<Vec<f64>>());
        }
        clusters.push(idx);
    }
    // Outliers on the negative first axis beyond every cluster, spaced by `gap`.
    let extent = points.iter().map(|p: &Vec<f64>| p[0]).fold(f64::INFINITY, f64::min);
    let mut outliers = Vec::with_capacity(n0);
    for j in 0..n0 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.25..0.25)).collect();
        v[0] = extent - gap * (j + 1) as f64;
        outliers.push(points.len());
        points.push(v);
    }
    let inst = PlantedInstance::new(DataSet::new(points)?, Clustering::new(clusters, outliers));
    debug_assert!(if n0 == 0 { inst.satisfies_s } else { inst.satisfies_s_prime });
    Ok(inst)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices of features with zero sample variance.
pub fn constant_features(data: &DataSet) -> Vec<usize> {
    (0..data.dim()).filter(|&j| column_stats(data, j).1 == 0.0).collect()
}

fn column_stats(data: &DataSet, j: usize) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.points().map(|p| p[j]).sum::<f64>() / n;
    let var = data.points().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standardizes every feature to sample mean 0 and sample standard deviation 1
/// (divisor `N - 1`). Constant features map to 0 with a logged warning.
pub fn zscore(data: &DataSet) -> Result<DataSet> {
    if data.len() < 2 {
        return Err(Error::InvalidInput("standardization needs at least two points".into()));
    }
    let stats: Vec<(f64, f64)> = (0..data.dim()).map(|j| column_stats(data, j)).collect();
    for (j, _) in stats.iter().enumerate().filter(|(_, s)| s.1 == 0.0) {
        log::warn!("feature {j} has zero variance; it is mapped to 0");
    }
    let points = data
        .points()
        .map(|p| {
            p.iter()
                .zip(&stats)
                .map(|(v, &(m, s))| if s == 0.0 { 0.0 } else { (v - m) / s })
                .collect()
        })
        .collect();
    DataSet::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_is_regular() {
        for k in 2..6 {
            let c = simplex_centers(k, 3.0, k);
            for a in 0..k {
                for b in (a + 1)..k {
                    assert!((euclid(&c[a], &c[b]) - 3.0).abs() < 1e-12);
                }
                assert!(c[a][k - 1].abs() < 1e-15, "embedded in k-1 coordinates");
            }
        }
    }

    #[test]
    fn balls_are_unit_and_far_apart_when_delta_is_large() {
        let inst = generate_stochastic_balls(&[5, 5, 5], 100.0, 2, 11).unwrap();
        assert!(inst.satisfies_s);
        assert!(inst.certificate.max_intra <= 4.0);
        let far = generate_stochastic_balls(&[10, 20, 70], 2.5, 2, 3).unwrap();
        assert!(!far.satisfies_s, "unbalanced sizes never satisfy the assumption");
        assert!(matches!(generate_stochastic_balls(&[2, 2, 2, 2], 4.0, 2, 0), Err(Error::SpecViolation(_))));
    }

    #[test]
    fn separated_instances_meet_the_assumptions() {
        for seed in 0..20 {
            let a = generate_separated_instance(3, 4, 0, 2, 2.0, seed).unwrap();
            assert!(a.satisfies_s && a.satisfies_s_prime);
            let b = generate_separated_instance(3, 4, 3, 2, 2.0, seed).unwrap();
            assert!(b.satisfies_s_prime && !b.satisfies_s);
            assert_eq!(b.planted.outliers().len(), 3);
            b.planted.validate(15, &b.spec).unwrap();
        }
        let single = generate_separated_instance(4, 1, 0, 1, 1.5, 5).unwrap();
        assert_eq!(single.certificate.max_intra, 0.0);
        assert!(single.satisfies_s);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_separated_instance(2, 5, 2, 3, 3.0, 42).unwrap();
        let b = generate_separated_instance(2, 5, 2, 3, 3.0, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dataset, generate_separated_instance(2, 5, 2, 3, 3.0, 43).unwrap().dataset);
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&DataSet::new(vec![vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z.point(0)[0] + h).abs() < 1e-12 && (z.point(1)[0] - h).abs() < 1e-12);
        assert_eq!((z.point(0)[1], z.point(1)[1]), (0.0, 0.0));
        assert_eq!(constant_features(&DataSet::new(vec![vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap()), vec![1]);
        assert!(zscore(&DataSet::new(vec![vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn csv_uses_minus_one_for_outliers() {
        let inst = generate_separated_instance(2, 2, 1, 2, 2.0, 1).unwrap();
        let mut buf = Vec::new();
        inst.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,label");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].ends_with(",-1"));
        assert!(lines[1].ends_with(",0") && lines[3].ends_with(",1"));
    }
}
