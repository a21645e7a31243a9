//! Benchmark fixtures shared by the criterion targets.

use ccmeans_core::synth::generate_separated_instance;
use ccmeans_core::DataSet;

/// A well-separated balanced instance with `k` clusters of `n` points.
pub fn separated(k: usize, n: usize, seed: u64) -> DataSet {
    generate_separated_instance(k, n, 0, 2, 2.0, seed)
        .expect("valid generator arguments")
        .dataset
}
