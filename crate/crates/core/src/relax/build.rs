use super::program::{AffineExpr, ConicProgram, Layout, ProgramMeta, PsdConstraint, Var};
use super::RelaxationKind;
use crate::error::{Error, Result};
use crate::model::{CardinalitySpec, DistanceMatrix, GramMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Adds `pi^1_1 = 1` to the naive relaxation.
    pub naive_symmetry_breaking: bool,
}

/// Adds the constraints of `C_LP(n)` (and, if `sdp`, the Schur block of
/// `C_SDP(n)`) for the pair stored in vector block `xb` and matrix block `mb`.
fn add_pair_constraints(p: &mut ConicProgram, xb: usize, mb: usize, n: usize, big_n: usize, sdp: bool) {
    let x = |i| Var::vec(xb, i);
    let m = |i, j| Var::mat(mb, i, j);
    let rhs = 2.0 * n as f64 - big_n as f64;
    p.add_eq((0..big_n).map(|i| (x(i), 1.0)).collect(), rhs);
    for i in 0..big_n {
        let mut row: Vec<(Var, f64)> = (0..big_n).map(|j| (m(i, j), 1.0)).collect();
        row.push((x(i), -rhs));
        p.add_eq(row, 0.0);
    }
    for i in 0..big_n {
        p.add_eq(vec![(m(i, i), 1.0)], 1.0);
    }
    for i in 0..big_n {
        for j in i..big_n {
            let xs = |a: f64, b: f64| -> Vec<(Var, f64)> {
                if i == j {
                    vec![(x(i), a + b)]
                } else {
                    vec![(x(i), a), (x(j), b)]
                }
            };
            // M + 11' + x1' + 1x' >= 0 and M + 11' - x1' - 1x' >= 0.
            let mut r = vec![(m(i, j), -1.0)];
            r.extend(xs(-1.0, -1.0));
            p.add_le(r, 1.0);
            let mut r = vec![(m(i, j), -1.0)];
            r.extend(xs(1.0, 1.0));
            p.add_le(r, 1.0);
            if i != j {
                // M - 11' + x1' - 1x' <= 0 and its transpose.
                p.add_le(vec![(m(i, j), 1.0), (x(i), 1.0), (x(j), -1.0)], 1.0);
                p.add_le(vec![(m(i, j), 1.0), (x(i), -1.0), (x(j), 1.0)], 1.0);
            }
        }
    }
    if sdp {
        let mut entries = Vec::with_capacity((big_n + 1) * (big_n + 2) / 2);
        for i in 0..big_n {
            for j in i..big_n {
                entries.push((i, j, AffineExpr::var(m(i, j))));
            }
            entries.push((i, big_n, AffineExpr::var(x(i))));
        }
        entries.push((big_n, big_n, AffineExpr::constant(1.0)));
        let name = format!("schur[{}]", p.matrix_blocks[mb].name);
        p.psd.push(PsdConstraint { name, order: big_n + 1, entries });
    }
}

/// Adds `weight * <D, M + 11' + s(x1' + 1x')>` to the objective.
fn add_pair_objective(p: &mut ConicProgram, d: &DistanceMatrix, xb: usize, mb: usize, weight: f64, sign: f64) {
    let n = d.len();
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| d.get(i, j)).sum();
        p.objective.add(Var::vec(xb, i), 2.0 * sign * weight * row_sum);
        p.objective.constant += weight * row_sum;
        for j in (i + 1)..n {
            p.objective.add(Var::mat(mb, i, j), 2.0 * weight * d.get(i, j));
        }
    }
}

/// The constraint set of one `(x, M)` pair as a standalone program with a
/// zero objective: vector block `x` and matrix block `M`.
pub fn build_block_constraints(n: usize, big_n: usize, sdp: bool) -> Result<ConicProgram> {
    if n == 0 || n > big_n {
        return Err(Error::SpecViolation(format!("cluster size {n} must lie in 1..={big_n}")));
    }
    let mut p = ConicProgram::new(ProgramMeta {
        kind: None,
        layout: Layout::Generic,
        n: big_n,
        k: 1,
        spec: None,
    });
    let xb = p.add_vector_block("x", big_n);
    let mb = p.add_matrix_block("M", big_n);
    add_pair_constraints(&mut p, xb, mb, n, big_n, sdp);
    Ok(p)
}

pub fn build_relaxation(
    kind: RelaxationKind,
    d: &DistanceMatrix,
    w: &GramMatrix,
    spec: &CardinalitySpec,
) -> Result<ConicProgram> {
    build_relaxation_with(kind, d, w, spec, BuildOptions::default())
}

fn check_spec(kind: RelaxationKind, spec: &CardinalitySpec, big_n: usize) -> Result<()> {
    spec.check_total(big_n)?;
    if kind.requires_balanced() && !spec.is_balanced() {
        return Err(Error::SpecViolation(format!("{kind} requires equal cluster sizes")));
    }
    if kind.requires_outliers() && spec.outlier_count() == 0 {
        return Err(Error::SpecViolation(format!("{kind} requires at least one outlier")));
    }
    if !kind.requires_outliers() && spec.outlier_count() > 0 {
        return Err(Error::SpecViolation(format!(
            "{kind} has no outlier cluster but the spec prescribes {} outliers",
            spec.outlier_count()
        )));
    }
    Ok(())
}

pub fn build_relaxation_with(
    kind: RelaxationKind,
    d: &DistanceMatrix,
    w: &GramMatrix,
    spec: &CardinalitySpec,
    options: BuildOptions,
) -> Result<ConicProgram> {
    let big_n = d.len();
    if w.len() != big_n {
        return Err(Error::InvalidInput("distance and Gram matrices differ in size".into()));
    }
    if d.matrix().iter().chain(w.matrix().iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite distance or Gram entry".into()));
    }
    check_spec(kind, spec, big_n)?;
    let k = spec.k();
    let sizes = spec.sizes();
    let sdp = kind.is_sdp();
    use RelaxationKind::*;
    let layout = match kind {
        RLp | RSdp if k == 2 => Layout::MirroredPair,
        RLp | RSdp => Layout::PerCluster,
        RLpB | RSdpB => Layout::Balanced,
        RLpO | RSdpO => Layout::PerClusterWithOutliers,
        RLpOb | RSdpOb => Layout::BalancedWithOutliers,
        NaiveL => Layout::Assignment,
        Pw1 | Pw2 | Pw1B | Aw => Layout::Gram,
    };
    let mut p = ConicProgram::new(ProgramMeta { kind: Some(kind), layout, n: big_n, k, spec: Some(spec.clone()) });
    match layout {
        Layout::MirroredPair => {
            let xb = p.add_vector_block("x", big_n);
            let mb = p.add_matrix_block("M", big_n);
            add_pair_constraints(&mut p, xb, mb, sizes[0], big_n, sdp);
            add_pair_objective(&mut p, d, xb, mb, 1.0 / (8.0 * sizes[0] as f64), 1.0);
            add_pair_objective(&mut p, d, xb, mb, 1.0 / (8.0 * sizes[1] as f64), -1.0);
        }
        Layout::PerCluster | Layout::PerClusterWithOutliers => {
            let with_out = layout == Layout::PerClusterWithOutliers;
            let mut blocks = Vec::new();
            let all: Vec<(usize, bool)> = if with_out {
                std::iter::once((spec.outlier_count(), true)).chain(sizes.iter().map(|&s| (s, false))).collect()
            } else {
                sizes.iter().map(|&s| (s, false)).collect()
            };
            for (idx, &(size, outlier)) in all.iter().enumerate() {
                let label = if with_out { idx } else { idx + 1 };
                let xb = p.add_vector_block(format!("x{label}"), big_n);
                let mb = p.add_matrix_block(format!("M{label}"), big_n);
                add_pair_constraints(&mut p, xb, mb, size, big_n, sdp);
                if !outlier {
                    add_pair_objective(&mut p, d, xb, mb, 1.0 / (8.0 * size as f64), 1.0);
                }
                blocks.push(xb);
            }
            let rhs = if with_out { 1.0 - k as f64 } else { 2.0 - k as f64 };
            for i in 0..big_n {
                p.add_eq(blocks.iter().map(|&b| (Var::vec(b, i), 1.0)).collect(), rhs);
            }
        }
        Layout::Balanced => {
            let n = sizes[0];
            let x1 = p.add_vector_block("x1", big_n);
            let x = p.add_vector_block("x", big_n);
            let m1 = p.add_matrix_block("M1", big_n);
            let m = p.add_matrix_block("M", big_n);
            add_pair_constraints(&mut p, x1, m1, n, big_n, sdp);
            add_pair_constraints(&mut p, x, m, n, big_n, sdp);
            let wt = 1.0 / (8.0 * n as f64);
            add_pair_objective(&mut p, d, x1, m1, wt, 1.0);
            add_pair_objective(&mut p, d, x, m, wt * (k as f64 - 1.0), 1.0);
            for i in 0..big_n {
                p.add_eq(vec![(Var::vec(x1, i), 1.0), (Var::vec(x, i), k as f64 - 1.0)], 2.0 - k as f64);
            }
            p.add_eq(vec![(Var::vec(x1, 0), 1.0)], 1.0);
        }
        Layout::BalancedWithOutliers => {
            let n = sizes[0];
            let x = p.add_vector_block("x", big_n);
            let x0 = p.add_vector_block("x0", big_n);
            let m = p.add_matrix_block("M", big_n);
            let m0 = p.add_matrix_block("M0", big_n);
            add_pair_constraints(&mut p, x, m, n, big_n, sdp);
            add_pair_constraints(&mut p, x0, m0, spec.outlier_count(), big_n, sdp);
            add_pair_objective(&mut p, d, x, m, k as f64 / (8.0 * n as f64), 1.0);
            for i in 0..big_n {
                p.add_eq(vec![(Var::vec(x, i), k as f64), (Var::vec(x0, i), 1.0)], 1.0 - k as f64);
            }
        }
        Layout::Assignment => build_naive(&mut p, d, sizes, options.naive_symmetry_breaking),
        Layout::Gram => build_gram(&mut p, kind, d, w, k),
        Layout::Generic => unreachable!(),
    }
    Ok(p)
}

fn build_naive(p: &mut ConicProgram, d: &DistanceMatrix, sizes: &[usize], symmetry: bool) {
    let big_n = d.len();
    let k = sizes.len();
    let pis: Vec<usize> = (0..k).map(|c| p.add_vector_block(format!("pi{}", c + 1), big_n)).collect();
    let etas: Vec<usize> = (0..k).map(|c| p.add_matrix_block(format!("eta{}", c + 1), big_n)).collect();
    for c in 0..k {
        let (pb, eb) = (pis[c], etas[c]);
        p.add_eq((0..big_n).map(|i| (Var::vec(pb, i), 1.0)).collect(), sizes[c] as f64);
        for i in 0..big_n {
            p.add_ge(vec![(Var::vec(pb, i), 1.0)], 0.0);
            p.add_le(vec![(Var::vec(pb, i), 1.0)], 1.0);
            for j in i..big_n {
                p.add_ge(vec![(Var::mat(eb, i, j), 1.0)], 0.0);
                let mut r = vec![(Var::mat(eb, i, j), 1.0)];
                if i == j {
                    r.push((Var::vec(pb, i), -2.0));
                } else {
                    r.push((Var::vec(pb, i), -1.0));
                    r.push((Var::vec(pb, j), -1.0));
                }
                p.add_ge(r, -1.0);
                if j > i {
                    // (1/2)(1/n_k) sum_{i,j} d_ij eta_ij over the symmetric block.
                    p.objective.add(Var::mat(eb, i, j), d.get(i, j) / sizes[c] as f64);
                }
            }
        }
    }
    for i in 0..big_n {
        p.add_eq(pis.iter().map(|&b| (Var::vec(b, i), 1.0)).collect(), 1.0);
    }
    if symmetry {
        p.add_eq(vec![(Var::vec(pis[0], 0), 1.0)], 1.0);
    }
}

fn build_gram(p: &mut ConicProgram, kind: RelaxationKind, d: &DistanceMatrix, w: &GramMatrix, k: usize) {
    let big_n = d.len();
    let zb = p.add_matrix_block("Z", big_n);
    let z = |i, j| Var::mat(zb, i, j);
    if kind == RelaxationKind::Aw {
        for i in 0..big_n {
            for j in (i + 1)..big_n {
                p.objective.add(z(i, j), 2.0 * d.get(i, j));
            }
        }
    } else {
        // <W, I - Z> = Tr W - sum_ij w_ij z_ij.
        for i in 0..big_n {
            p.objective.constant += w.get(i, i);
            p.objective.add(z(i, i), -w.get(i, i));
            for j in (i + 1)..big_n {
                p.objective.add(z(i, j), -2.0 * w.get(i, j));
            }
        }
    }
    for i in 0..big_n {
        p.add_eq((0..big_n).map(|j| (z(i, j), 1.0)).collect(), 1.0);
    }
    p.add_eq((0..big_n).map(|i| (z(i, i), 1.0)).collect(), k as f64);
    let mut entries = Vec::new();
    for i in 0..big_n {
        for j in i..big_n {
            entries.push((i, j, AffineExpr::var(z(i, j))));
        }
    }
    p.psd.push(PsdConstraint { name: "Z".into(), order: big_n, entries });
    match kind {
        RelaxationKind::Pw2 => {
            let mut entries = Vec::new();
            for i in 0..big_n {
                for j in i..big_n {
                    let mut e = AffineExpr::constant(if i == j { 1.0 } else { 0.0 });
                    e.add(z(i, j), -1.0);
                    entries.push((i, j, e));
                }
            }
            p.psd.push(PsdConstraint { name: "I-Z".into(), order: big_n, entries });
        }
        _ => {
            let cap = k as f64 / big_n as f64;
            for i in 0..big_n {
                for j in i..big_n {
                    p.add_ge(vec![(z(i, j), 1.0)], 0.0);
                    if kind == RelaxationKind::Pw1B {
                        p.add_le(vec![(z(i, j), 1.0)], cap);
                    }
                }
            }
        }
    }
}
