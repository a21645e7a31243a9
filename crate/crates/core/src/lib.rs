//! Cardinality-constrained K-means clustering with optional outlier
//! detection.
//!
//! The crate provides the exact data model, LP and SDP relaxations with
//! self-contained conic solvers, deterministic rounding schemes with
//! recovery guarantees under separation, a local-search baseline, an exact
//! enumeration oracle for small instances, synthetic instance generators
//! and an experiment harness.
//!
//! ```
//! use ccmeans_core::{generate_separated_instance, round, CardinalitySpec, RelaxationKind, RoundingConfig};
//! # fn main() -> ccmeans_core::Result<()> {
//! let inst = generate_separated_instance(3, 5, 2, 2, 2.0, 7)?;
//! let spec = CardinalitySpec::new(vec![5, 5, 5], 2)?;
//! let r = round(&inst.dataset, &spec, RelaxationKind::RLpOb, &RoundingConfig::default())?;
//! assert!(r.certified && r.gap < 1e-6);
//! # Ok(())
//! # }
//! ```

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod experiment;
pub mod heuristics;
pub mod model;
pub mod oracle;
pub mod relax;
pub mod rounding;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    centroids, check_voronoi_compatibility, cluster_cost, distance_matrix, gram_matrix, solve_assignment,
    solve_assignment_for_spec, CardinalitySpec, Centers, Clustering, DataSet, DistanceMatrix, GramMatrix,
};
pub use relax::{build_relaxation, ConicProgram, RelaxationKind, RelaxationSolution};
pub use solver::{solve, solve_lp, solve_sdp, SolverConfig, SolverStatus};
pub use experiment::{elbow_scan, ingest_csv, run_experiment, ExperimentConfig, Method, Report, ReportRow};
pub use heuristics::{bennett, multistart_bennett};
pub use oracle::enumerate_optimal;
pub use relax::lift_to_pw;
pub use rounding::{round, RoundingConfig, RoundingResult};
pub use synth::{generate_separated_instance, generate_stochastic_balls, zscore, PlantedInstance};
