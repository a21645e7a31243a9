mod common;

use ccmeans_core::heuristics::{bennett, kmeanspp_centers, multistart_bennett};
use ccmeans_core::model::pairwise_cost;
use ccmeans_core::oracle::enumerate_optimal;
use ccmeans_core::relax::export::{from_sdpa, to_sdpa};
use ccmeans_core::relax::{embed_integral, RelaxationSolution};
use ccmeans_core::synth::{generate_separated_instance, zscore};
use ccmeans_core::{
    build_relaxation, check_voronoi_compatibility, cluster_cost, distance_matrix, gram_matrix, solve_assignment,
    CardinalitySpec, Clustering, DataSet, RelaxationKind,
};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn points(n: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = DataSet> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), n).prop_map(|p| DataSet::new(p).unwrap())
}

/// A dataset with a random partition into `k` non-empty clusters.
fn partitioned(max_n: usize) -> impl Strategy<Value = (DataSet, Clustering, CardinalitySpec)> {
    (2..=max_n, 1..=3usize).prop_flat_map(|(n, k)| {
        let k = k.min(n);
        (points(n..=n, 2), Just(k), prop::collection::vec(0..k, n))
    })
    .prop_filter_map("every cluster non-empty", |(data, k, labels)| {
        let mut clusters = vec![Vec::new(); k];
        for (i, l) in labels.into_iter().enumerate() {
            clusters[l].push(i);
        }
        if clusters.iter().any(Vec::is_empty) {
            return None;
        }
        let spec = CardinalitySpec::new(clusters.iter().map(Vec::len).collect(), 0).ok()?;
        Some((data, Clustering::new(clusters, vec![]), spec))
    })
}

fn enumerate_assignment(cost: &DMatrix<f64>, caps: &mut [usize], row: usize) -> f64 {
    if row == cost.nrows() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for c in 0..caps.len() {
        if caps[c] > 0 {
            caps[c] -= 1;
            best = best.min(cost[(row, c)] + enumerate_assignment(cost, caps, row + 1));
            caps[c] += 1;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lemma_one_forms_agree((data, clustering, spec) in partitioned(14)) {
        let reference = partition_cost(&data, clustering.clusters());
        let centroid = cluster_cost(&data, &clustering, &spec).unwrap();
        let pairwise = pairwise_cost(&distance_matrix(&data), &clustering);
        prop_assert!((centroid - reference).abs() <= 1e-9 * (1.0 + reference));
        prop_assert!((pairwise - reference).abs() <= 1e-9 * (1.0 + reference));
    }

    #[test]
    fn assignment_matches_enumeration(
        (cost, caps) in (1..=8usize, 1..=4usize).prop_flat_map(|(n, k)| {
            let k = k.min(n);
            (
                prop::collection::vec(-20i32..20, n * k).prop_map(move |v| DMatrix::from_fn(n, k, |i, j| v[i * k + j] as f64 / 4.0)),
                prop::collection::vec(0..k, n).prop_map(move |l| {
                    let mut caps = vec![0; k];
                    l.into_iter().for_each(|c| caps[c] += 1);
                    caps
                }),
            )
        })
    ) {
        let a = solve_assignment(&cost, &caps).unwrap();
        let mut counts = vec![0; caps.len()];
        a.columns.iter().for_each(|&c| counts[c] += 1);
        prop_assert_eq!(&counts, &caps);
        let reference = enumerate_assignment(&cost, &mut caps.clone(), 0);
        prop_assert!((a.objective - reference).abs() <= 1e-9);
    }

    #[test]
    fn local_search_is_monotone_and_feasible((data, _c, spec) in partitioned(16), seed in 0u64..1000) {
        let init = kmeanspp_centers(&data, spec.k(), seed).unwrap();
        let full = bennett(&data, &spec, &init, 100).unwrap();
        for w in full.cost_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0]));
        }
        for cap in 1..=full.iterations {
            let r = bennett(&data, &spec, &init, cap).unwrap();
            prop_assert!(r.clustering.validate(data.len(), &spec).is_ok());
        }
    }

    #[test]
    fn seeded_paths_are_bit_identical(seed in 0u64..10_000, k in 2..=3usize, n in 2..=4usize) {
        let a = generate_separated_instance(k, n, 1, 2, 2.0, seed).unwrap();
        let b = generate_separated_instance(k, n, 1, 2, 2.0, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let spec = CardinalitySpec::balanced(k, n).unwrap();
        let regular = a.dataset.subset(&(0..k * n).collect::<Vec<_>>()).unwrap();
        let x = multistart_bennett(&regular, &spec, 3, seed).unwrap();
        let y = multistart_bennett(&regular, &spec, 3, seed).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn zscore_standardizes(data in points(2..=20, 3)) {
        let z = zscore(&data).unwrap();
        let n = data.len() as f64;
        for j in 0..3 {
            let mean = z.points().map(|p| p[j]).sum::<f64>() / n;
            let var = z.points().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9 || var == 0.0);
        }
    }

    #[test]
    fn gram_and_distance_agree(data in points(1..=10, 3)) {
        let d = distance_matrix(&data);
        let w = gram_matrix(&data);
        for i in 0..data.len() {
            for j in 0..data.len() {
                let v = w.get(i, i) + w.get(j, j) - 2.0 * w.get(i, j);
                prop_assert!((d.get(i, j) - v).abs() <= 1e-9 * (1.0 + d.get(i, j)));
                prop_assert!((d.get(i, j) - sq(data.point(i), data.point(j))).abs() <= 1e-9 * (1.0 + d.get(i, j)));
            }
        }
    }

    /// Embedding a feasible clustering into a relaxation reproduces its cost.
    #[test]
    fn embedded_clusterings_evaluate_to_their_cost((data, clustering, spec) in partitioned(8)) {
        let cost = cluster_cost(&data, &clustering, &spec).unwrap();
        let emb: RelaxationSolution = embed_integral(&clustering, &spec).unwrap();
        let kind = emb.kind.unwrap();
        let program = build_relaxation(kind, &distance_matrix(&data), &gram_matrix(&data), &spec).unwrap();
        let values = emb.values(&program);
        prop_assert!((program.evaluate_objective(&values) - cost).abs() <= 1e-9 * (1.0 + cost));
        prop_assert!(program.linear_violation(&values) <= 1e-9);
    }

    #[test]
    fn sdpa_export_roundtrips((data, _c, spec) in partitioned(6), sdp in any::<bool>()) {
        let kind = if sdp { RelaxationKind::RSdp } else { RelaxationKind::RLp };
        let program = build_relaxation(kind, &distance_matrix(&data), &gram_matrix(&data), &spec).unwrap();
        let back = from_sdpa(&to_sdpa(&program)).unwrap();
        prop_assert_eq!(back.var_count(), program.var_count());
        let values: Vec<f64> = (0..program.var_count()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let a = program.evaluate_objective(&values);
        let b = back.evaluate_objective(&values);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_optima_are_voronoi_compatible(data in points(4..=9, 2), k in 2..=3usize) {
        let n = data.len();
        let mut sizes = vec![n / k; k];
        sizes[0] += n % k;
        let spec = CardinalitySpec::new(sizes, 0).unwrap();
        let opt = enumerate_optimal(&data, &spec).unwrap();
        prop_assert!((opt.cost - brute_force_optimum(&data, &spec)).abs() <= 1e-9 * (1.0 + opt.cost));
        let report = check_voronoi_compatibility(&data, &opt.clustering);
        prop_assert!(report.all_separable());
    }
}
