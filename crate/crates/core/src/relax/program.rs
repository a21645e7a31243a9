//! Block-structured conic programs.
//!
//! Variables live in named vector blocks and symmetric matrix blocks; a
//! matrix block of order `n` owns one variable per upper-triangular entry.
//! Constraints reference variables through [`Var`] and stay sparse.

use super::RelaxationKind;
use crate::model::CardinalitySpec;
use serde::{Deserialize, Serialize};

/// A scalar decision variable inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    Vec { block: usize, index: usize },
    /// Entry `(row, col)` of a symmetric block; normalized so `row <= col`.
    Mat { block: usize, row: usize, col: usize },
}

impl Var {
    pub fn vec(block: usize, index: usize) -> Self {
        Var::Vec { block, index }
    }

    pub fn mat(block: usize, i: usize, j: usize) -> Self {
        let (row, col) = if i <= j { (i, j) } else { (j, i) };
        Var::Mat { block, row, col }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorBlock {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixBlock {
    pub name: String,
    pub order: usize,
}

/// `constant + sum coeff * var`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(Var, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(v: Var) -> Self {
        Self { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn add(&mut self, v: Var, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((v, coeff));
        }
    }
}

/// `sum coeff * var (= or <=) rhs`, depending on which list holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(Var, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(Var, f64)>, rhs: f64) -> Self {
        Self { terms: terms.into_iter().filter(|(_, c)| *c != 0.0).collect(), rhs }
    }
}

/// A symmetric affine matrix expression required to be positive semidefinite.
/// Only upper-triangular entries are listed; missing entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdConstraint {
    pub name: String,
    pub order: usize,
    pub entries: Vec<(usize, usize, AffineExpr)>,
}

/// How the blocks of a program map onto clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// One `(x^k, M^k)` pair per cluster, blocks `0..K`.
    PerCluster,
    /// `K = 2` with `x^2 = -x^1` and `M^2 = M^1`: a single pair.
    MirroredPair,
    /// `(x^1, M^1)` followed by one pair shared by clusters `2..K`.
    Balanced,
    /// Outlier pair `(x^0, M^0)` first, then one pair per cluster.
    PerClusterWithOutliers,
    /// One pair shared by all clusters, then the outlier pair.
    BalancedWithOutliers,
    /// Assignment vectors `pi^k` and product matrices `eta^k`.
    Assignment,
    /// A single normalized co-membership matrix `Z`.
    Gram,
    /// No clustering interpretation.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub kind: Option<RelaxationKind>,
    pub layout: Layout,
    /// Number of points.
    pub n: usize,
    /// Number of (non-outlier) clusters.
    pub k: usize,
    pub spec: Option<CardinalitySpec>,
}

/// A linear objective over structured blocks with linear equalities,
/// element-wise inequalities `terms <= rhs` and PSD constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub vector_blocks: Vec<VectorBlock>,
    pub matrix_blocks: Vec<MatrixBlock>,
    pub objective: AffineExpr,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
    pub psd: Vec<PsdConstraint>,
    pub meta: ProgramMeta,
}

impl ConicProgram {
    pub fn new(meta: ProgramMeta) -> Self {
        Self {
            vector_blocks: Vec::new(),
            matrix_blocks: Vec::new(),
            objective: AffineExpr::default(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            psd: Vec::new(),
            meta,
        }
    }

    pub fn add_vector_block(&mut self, name: impl Into<String>, len: usize) -> usize {
        self.vector_blocks.push(VectorBlock { name: name.into(), len });
        self.vector_blocks.len() - 1
    }

    pub fn add_matrix_block(&mut self, name: impl Into<String>, order: usize) -> usize {
        self.matrix_blocks.push(MatrixBlock { name: name.into(), order });
        self.matrix_blocks.len() - 1
    }

    pub fn add_eq(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.equalities.push(LinearConstraint::new(terms, rhs));
    }

    pub fn add_le(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.inequalities.push(LinearConstraint::new(terms, rhs));
    }

    pub fn add_ge(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.add_le(terms.into_iter().map(|(v, c)| (v, -c)).collect(), -rhs);
    }

    /// Total number of scalar variables.
    pub fn var_count(&self) -> usize {
        self.vector_blocks.iter().map(|b| b.len).sum::<usize>()
            + self.matrix_blocks.iter().map(|b| b.order * (b.order + 1) / 2).sum::<usize>()
    }

    /// Flat variable index: vector blocks first, then the upper triangles
    /// of matrix blocks in row-major order.
    pub fn var_index(&self, v: Var) -> usize {
        match v {
            Var::Vec { block, index } => {
                self.vector_blocks[..block].iter().map(|b| b.len).sum::<usize>() + index
            }
            Var::Mat { block, row, col } => {
                let base = self.vector_blocks.iter().map(|b| b.len).sum::<usize>()
                    + self.matrix_blocks[..block]
                        .iter()
                        .map(|b| b.order * (b.order + 1) / 2)
                        .sum::<usize>();
                let n = self.matrix_blocks[block].order;
                base + row * n - row * row.saturating_sub(1) / 2 + (col - row)
            }
        }
    }

    /// Inverse of [`Self::var_index`].
    pub fn var_at(&self, mut idx: usize) -> Var {
        for (b, blk) in self.vector_blocks.iter().enumerate() {
            if idx < blk.len {
                return Var::vec(b, idx);
            }
            idx -= blk.len;
        }
        for (b, blk) in self.matrix_blocks.iter().enumerate() {
            let size = blk.order * (blk.order + 1) / 2;
            if idx < size {
                let n = blk.order;
                let mut row = 0;
                let mut rem = idx;
                while rem >= n - row {
                    rem -= n - row;
                    row += 1;
                }
                return Var::mat(b, row, row + rem);
            }
            idx -= size;
        }
        panic!("variable index out of range")
    }

    pub fn has_psd(&self) -> bool {
        !self.psd.is_empty()
    }

    /// Largest absolute violation of the linear constraints at a point
    /// (equalities in absolute value, inequalities one-sided).
    pub fn linear_violation(&self, values: &[f64]) -> f64 {
        let eval = |terms: &[(Var, f64)]| -> f64 {
            terms.iter().map(|(v, c)| c * values[self.var_index(*v)]).sum()
        };
        let eq = self.equalities.iter().map(|c| (eval(&c.terms) - c.rhs).abs());
        let le = self.inequalities.iter().map(|c| (eval(&c.terms) - c.rhs).max(0.0));
        eq.chain(le).fold(0.0, f64::max)
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.objective.constant
            + self
                .objective
                .terms
                .iter()
                .map(|(v, c)| c * values[self.var_index(*v)])
                .sum::<f64>()
    }
}
