//! Conic solvers: an interior-point LP method on the homogeneous
//! self-dual embedding, an operator-splitting SDP method, a symmetric
//! eigensolver and the spectral shortcut for the PW2 relaxation.

mod admm;
mod eig;
mod ipm;
pub(crate) mod kkt;
pub(crate) mod standard;

pub use eig::{project_psd, solve_pw2_spectral, sym_eig, SymEig};

use crate::error::{Error, Result};
use crate::relax::{ConicProgram, RelaxationSolution};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const DEFAULT_LP_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_SDP_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_LP_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_SDP_MAX_ITERATIONS: usize = 20_000;
pub const DEFAULT_MAX_POINTS: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    /// Wall-clock budget exhausted; the best iterate is returned.
    TimeLimit,
    PrimalInfeasible,
    /// Unbounded objective.
    DualInfeasible,
    NumericalFailure,
}

impl SolverStatus {
    pub fn is_optimal(self) -> bool {
        self == SolverStatus::Optimal
    }

    /// Whether the iterate is still usable (e.g. for rounding).
    pub fn has_iterate(self) -> bool {
        matches!(
            self,
            SolverStatus::Optimal
                | SolverStatus::MaxIterations
                | SolverStatus::TimeLimit
                | SolverStatus::NumericalFailure
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIterations => "max-iterations",
            SolverStatus::TimeLimit => "timeout",
            SolverStatus::PrimalInfeasible => "infeasible",
            SolverStatus::DualInfeasible => "unbounded",
            SolverStatus::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative primal/dual feasibility tolerance; `None` selects the
    /// backend default.
    pub tolerance: Option<f64>,
    /// Relative duality-gap tolerance; defaults to the feasibility one.
    pub gap_tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Row/column equilibration before solving.
    pub scaling: bool,
    /// Reserved; both backends are deterministic.
    pub seed: u64,
    /// Largest accepted number of points in a relaxation.
    pub max_points: usize,
    pub time_limit: Option<Duration>,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: None,
            gap_tolerance: None,
            max_iterations: None,
            scaling: true,
            seed: 0,
            max_points: DEFAULT_MAX_POINTS,
            time_limit: None,
            record_history: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    pub fn with_max_iterations(mut self, it: usize) -> Self {
        self.max_iterations = Some(it);
        self
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.tolerance, self.gap_tolerance].into_iter().flatten() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tolerance must be positive, got {t}")));
            }
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("iteration cap must be at least 1".into()));
        }
        if self.max_points == 0 {
            return Err(Error::Config("point cap must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn resolved(&self, sdp: bool) -> (f64, f64, usize) {
        let (t, it) = if sdp {
            (DEFAULT_SDP_TOLERANCE, DEFAULT_SDP_MAX_ITERATIONS)
        } else {
            (DEFAULT_LP_TOLERANCE, DEFAULT_LP_MAX_ITERATIONS)
        };
        let tol = self.tolerance.unwrap_or(t);
        (tol, self.gap_tolerance.unwrap_or(tol), self.max_iterations.unwrap_or(it))
    }

    fn check_size(&self, program: &ConicProgram) -> Result<()> {
        if program.meta.n > self.max_points {
            return Err(Error::ResourceLimit(format!(
                "relaxation over {} points exceeds the configured cap of {}",
                program.meta.n, self.max_points
            )));
        }
        Ok(())
    }
}

/// Solves a program without PSD constraints by the interior-point method.
pub fn solve_lp(program: &ConicProgram, config: &SolverConfig) -> Result<RelaxationSolution> {
    config.validate()?;
    config.check_size(program)?;
    if program.has_psd() {
        return Err(Error::InvalidInput("solve_lp requires a program without PSD constraints".into()));
    }
    ipm::solve(program, config)
}

/// Solves a program with (or without) PSD constraints by the
/// operator-splitting method.
pub fn solve_sdp(program: &ConicProgram, config: &SolverConfig) -> Result<RelaxationSolution> {
    config.validate()?;
    config.check_size(program)?;
    admm::solve(program, config)
}

/// Dispatches on the presence of PSD constraints.
pub fn solve(program: &ConicProgram, config: &SolverConfig) -> Result<RelaxationSolution> {
    if program.has_psd() {
        solve_sdp(program, config)
    } else {
        solve_lp(program, config)
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
