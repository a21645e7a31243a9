//! Convex relaxations of cardinality-constrained clustering and the maps
//! between their solution spaces.

mod build;
pub mod export;
mod program;
mod solution;

pub use build::{build_block_constraints, build_relaxation, build_relaxation_with, BuildOptions};
pub use program::{
    AffineExpr, ConicProgram, Layout, LinearConstraint, MatrixBlock, ProgramMeta, PsdConstraint, Var,
    VectorBlock,
};
pub use solution::{
    embed_integral, embed_integral_for, lift_to_pw, lift_to_pw_with_tolerance, pw_feasibility,
    to_assignment_space, PwFeasibility, RelaxationSolution, DEFAULT_FEASIBILITY_TOLERANCE,
};

use crate::error::Error;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelaxationKind {
    #[serde(rename = "R_LP")]
    RLp,
    #[serde(rename = "R_SDP")]
    RSdp,
    #[serde(rename = "R_LP_b")]
    RLpB,
    #[serde(rename = "R_SDP_b")]
    RSdpB,
    #[serde(rename = "R_LP_o")]
    RLpO,
    #[serde(rename = "R_SDP_o")]
    RSdpO,
    #[serde(rename = "R_LP_ob")]
    RLpOb,
    #[serde(rename = "R_SDP_ob")]
    RSdpOb,
    #[serde(rename = "NAIVE_L")]
    NaiveL,
    #[serde(rename = "PW1")]
    Pw1,
    #[serde(rename = "PW2")]
    Pw2,
    #[serde(rename = "PW1_b")]
    Pw1B,
    #[serde(rename = "AW")]
    Aw,
}

impl RelaxationKind {
    pub const ALL: [RelaxationKind; 13] = [
        RelaxationKind::RLp,
        RelaxationKind::RSdp,
        RelaxationKind::RLpB,
        RelaxationKind::RSdpB,
        RelaxationKind::RLpO,
        RelaxationKind::RSdpO,
        RelaxationKind::RLpOb,
        RelaxationKind::RSdpOb,
        RelaxationKind::NaiveL,
        RelaxationKind::Pw1,
        RelaxationKind::Pw2,
        RelaxationKind::Pw1B,
        RelaxationKind::Aw,
    ];

    pub fn name(self) -> &'static str {
        use RelaxationKind::*;
        match self {
            RLp => "R_LP",
            RSdp => "R_SDP",
            RLpB => "R_LP_b",
            RSdpB => "R_SDP_b",
            RLpO => "R_LP_o",
            RSdpO => "R_SDP_o",
            RLpOb => "R_LP_ob",
            RSdpOb => "R_SDP_ob",
            NaiveL => "NAIVE_L",
            Pw1 => "PW1",
            Pw2 => "PW2",
            Pw1B => "PW1_b",
            Aw => "AW",
        }
    }

    /// Whether the program carries PSD constraints.
    pub fn is_sdp(self) -> bool {
        use RelaxationKind::*;
        matches!(self, RSdp | RSdpB | RSdpO | RSdpOb | Pw1 | Pw2 | Pw1B | Aw)
    }

    pub fn requires_balanced(self) -> bool {
        use RelaxationKind::*;
        matches!(self, RLpB | RSdpB | RLpOb | RSdpOb | Pw1B)
    }

    pub fn requires_outliers(self) -> bool {
        use RelaxationKind::*;
        matches!(self, RLpO | RSdpO | RLpOb | RSdpOb)
    }

    /// Kinds whose variables are `(x, M)` pairs.
    pub fn is_pair_based(self) -> bool {
        use RelaxationKind::*;
        matches!(self, RLp | RSdp | RLpB | RSdpB | RLpO | RSdpO | RLpOb | RSdpOb)
    }

    /// The same family with the PSD constraints dropped or added.
    pub fn with_sdp(self, sdp: bool) -> Self {
        use RelaxationKind::*;
        match (self, sdp) {
            (RLp | RSdp, true) => RSdp,
            (RLp | RSdp, false) => RLp,
            (RLpB | RSdpB, true) => RSdpB,
            (RLpB | RSdpB, false) => RLpB,
            (RLpO | RSdpO, true) => RSdpO,
            (RLpO | RSdpO, false) => RLpO,
            (RLpOb | RSdpOb, true) => RSdpOb,
            (RLpOb | RSdpOb, false) => RLpOb,
            (k, _) => k,
        }
    }
}

impl fmt::Display for RelaxationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelaxationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace('-', "_").to_ascii_lowercase();
        RelaxationKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Config(format!("unknown relaxation kind '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for k in RelaxationKind::ALL {
            assert_eq!(k.name().parse::<RelaxationKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert_eq!("r-sdp-b".parse::<RelaxationKind>().unwrap(), RelaxationKind::RSdpB);
        assert!("R_XYZ".parse::<RelaxationKind>().is_err());
    }
}
