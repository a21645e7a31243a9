//! Operator splitting for `min c'v s.t. Av + s = b, s in K` where `K` is a
//! product of the zero cone, the nonnegative orthant and PSD cones in
//! scaled-vectorized form (off-diagonals times sqrt 2).
//!
//! Each iteration solves one quasi-definite system with a fixed factor,
//! projects onto `K` and updates the dual. The step size `rho` adapts to
//! the residual balance; changing it triggers a refactorization.

use super::kkt::KktStructure;
use super::standard::{lower, Csr, StandardForm};
use super::{dot, inf_norm, IterationRecord, SolverConfig, SolverStatus};
use crate::error::{Error, Result};
use crate::relax::{ConicProgram, RelaxationSolution};
use nalgebra::DMatrix;
use std::time::Instant;

const ALPHA: f64 = 1.5;
const SIGMA: f64 = 1e-6;
const RHO_INIT: f64 = 0.1;
const RHO_EQ_FACTOR: f64 = 1e3;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const LOCAL_MAX_NNZ: usize = 3;
const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cone {
    Zero,
    NonNeg,
    Psd(usize),
}

/// Cone rows in order: equalities, inequalities, PSD blocks.
struct ConeProblem {
    a: Csr,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Cone of each row.
    cones: Vec<Cone>,
    /// For PSD block k: (first row, order).
    psd: Vec<(usize, usize)>,
}

fn assemble(sf: &StandardForm) -> ConeProblem {
    let mut a = Csr::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    a.append(&sf.a);
    b.extend_from_slice(&sf.b);
    cones.extend(std::iter::repeat_n(Cone::Zero, sf.a.rows()));
    a.append(&sf.g);
    b.extend_from_slice(&sf.h);
    cones.extend(std::iter::repeat_n(Cone::NonNeg, sf.g.rows()));
    let mut psd = Vec::new();
    for (k, blk) in sf.psd.iter().enumerate() {
        psd.push((a.rows(), blk.order));
        for (e, &(i, j)) in blk.entries.iter().enumerate() {
            let f = if i == j { 1.0 } else { SQRT2 };
            let (idx, val) = blk.rows.row(e);
            let row: Vec<(usize, f64)> = idx.iter().zip(val).map(|(&j, &v)| (j, -f * v)).collect();
            a.push_row(&row);
            b.push(f * blk.consts[e]);
            cones.push(Cone::Psd(k));
        }
    }
    ConeProblem { a, b, c: sf.c.clone(), cones, psd }
}

/// Ruiz equilibration: returns row scaling `d`, column scaling `e` and the
/// cost scale. Rows of one PSD block share a scale to preserve the cone.
fn equilibrate(cp: &ConeProblem, n: usize, iters: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let m = cp.a.rows();
    let mut d = vec![1.0; m];
    let mut e = vec![1.0; n];
    for _ in 0..iters {
        let mut col = vec![0.0f64; n];
        let mut row = vec![0.0f64; m];
        for r in 0..m {
            let (idx, val) = cp.a.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                let x = (d[r] * v * e[j]).abs();
                col[j] = col[j].max(x);
                row[r] = row[r].max(x);
            }
        }
        for &(start, order) in &cp.psd {
            let len = order * (order + 1) / 2;
            let mx = row[start..start + len].iter().fold(0.0f64, |a, &b| a.max(b));
            row[start..start + len].iter_mut().for_each(|v| *v = mx);
        }
        for j in 0..n {
            if col[j] > 1e-12 {
                e[j] = (e[j] / col[j].sqrt()).clamp(1e-4, 1e4);
            }
        }
        for r in 0..m {
            if row[r] > 1e-12 {
                d[r] = (d[r] / row[r].sqrt()).clamp(1e-4, 1e4);
            }
        }
    }
    let cs = inf_norm(&cp.c.iter().zip(&e).map(|(c, e)| c * e).collect::<Vec<_>>());
    let gamma = if cs > 1e-12 { (1.0 / cs).clamp(1e-4, 1e4) } else { 1.0 };
    (d, e, gamma)
}

fn svec_to_mat(v: &[f64], order: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order, order);
    let mut k = 0;
    for j in 0..order {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

fn mat_to_svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let order = m.nrows();
    let mut k = 0;
    for j in 0..order {
        for i in 0..=j {
            out[k] = if i == j { m[(i, i)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2 };
            k += 1;
        }
    }
}

fn project(cp: &ConeProblem, v: &mut [f64]) {
    for (r, cone) in cp.cones.iter().enumerate() {
        match cone {
            Cone::Zero => v[r] = 0.0,
            Cone::NonNeg => v[r] = v[r].max(0.0),
            Cone::Psd(_) => {}
        }
    }
    for &(start, order) in &cp.psd {
        let len = order * (order + 1) / 2;
        let m = svec_to_mat(&v[start..start + len], order);
        let p = super::eig::project_psd(&m);
        mat_to_svec(&p, &mut v[start..start + len]);
    }
}

pub(super) fn solve(program: &ConicProgram, config: &SolverConfig) -> Result<RelaxationSolution> {
    let start = Instant::now();
    let (tol, gap_tol, max_iter) = config.resolved(true);
    let sf = lower(program);
    if sf.infeasible {
        let values = sf.expand(&vec![0.0; sf.n]);
        let mut sol = RelaxationSolution::from_values(program, &values);
        sol.status = SolverStatus::PrimalInfeasible;
        sol.objective = f64::NAN;
        return Ok(sol);
    }
    let n = sf.n;
    let cp = assemble(&sf);
    let m = cp.a.rows();
    let (d, e, gamma) = if config.scaling { equilibrate(&cp, n, 15) } else { (vec![1.0; m], vec![1.0; n], 1.0) };

    // Scaled data.
    let mut a_s = cp.a.clone();
    for r in 0..m {
        let (a0, a1) = (a_s.ptr[r], a_s.ptr[r + 1]);
        for k in a0..a1 {
            a_s.val[k] *= d[r] * e[a_s.idx[k]];
        }
    }
    let b_s: Vec<f64> = (0..m).map(|r| d[r] * cp.b[r]).collect();
    let c_s: Vec<f64> = (0..n).map(|j| gamma * e[j] * cp.c[j]).collect();

    // Split rows into locally folded rows and coupling rows.
    let mut local_rows = Vec::new();
    let mut coupling_rows = Vec::new();
    for r in 0..m {
        let nnz = a_s.row(r).0.len();
        if cp.cones[r] != Cone::Zero && nnz <= LOCAL_MAX_NNZ {
            local_rows.push(r);
        } else {
            coupling_rows.push(r);
        }
    }
    let st = KktStructure::new(n, a_s.select_rows(&local_rows), a_s.select_rows(&coupling_rows));
    let hd = vec![SIGMA; n];
    let rho_row = |rho: f64, r: usize| if cp.cones[r] == Cone::Zero { RHO_EQ_FACTOR * rho } else { rho };

    let mut rho = RHO_INIT;
    let factor_for = |rho: f64| {
        let w: Vec<f64> = local_rows.iter().map(|&r| rho_row(rho, r)).collect();
        let c0: Vec<f64> = coupling_rows.iter().map(|&r| 1.0 / rho_row(rho, r)).collect();
        st.factor(&hd, &w, &c0)
    };
    let mut fac = factor_for(rho).ok_or_else(|| Error::Solver("KKT factorization failed".into()))?;

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut history = Vec::new();
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;
    let mut report = (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let mut y_prev = y.clone();
    let mut x_prev = x.clone();

    let mut gl = vec![0.0; local_rows.len()];
    let mut gc = vec![0.0; coupling_rows.len()];
    let mut nu = vec![0.0; m];
    for k in 1..=max_iter {
        iterations = k;
        let rhos: Vec<f64> = (0..m).map(|r| rho_row(rho, r)).collect();
        let f: Vec<f64> = (0..n).map(|j| SIGMA * x[j] - c_s[j]).collect();
        for (t, &r) in local_rows.iter().enumerate() {
            gl[t] = b_s[r] - s[r] + y[r] / rhos[r];
        }
        for (t, &r) in coupling_rows.iter().enumerate() {
            gc[t] = b_s[r] - s[r] + y[r] / rhos[r];
        }
        let sol = fac.solve(&f, &gl, &gc, None, None, 1);
        for (t, &r) in local_rows.iter().enumerate() {
            nu[r] = sol.v_local[t];
        }
        for (t, &r) in coupling_rows.iter().enumerate() {
            nu[r] = sol.v_coupling[t];
        }
        x_prev.copy_from_slice(&x);
        for j in 0..n {
            x[j] = ALPHA * sol.u[j] + (1.0 - ALPHA) * x[j];
        }
        let mut relaxed = vec![0.0; m];
        let mut s_new = vec![0.0; m];
        for r in 0..m {
            let s_tilde = s[r] - (nu[r] + y[r]) / rhos[r];
            relaxed[r] = ALPHA * s_tilde + (1.0 - ALPHA) * s[r];
            s_new[r] = relaxed[r] + y[r] / rhos[r];
        }
        project(&cp, &mut s_new);
        y_prev.copy_from_slice(&y);
        for r in 0..m {
            y[r] += rhos[r] * (relaxed[r] - s_new[r]);
        }
        s = s_new;

        let check = k % CHECK_EVERY == 0 || k == max_iter;
        if !check {
            continue;
        }
        // Unscaled quantities.
        let xu: Vec<f64> = (0..n).map(|j| e[j] * x[j]).collect();
        let su: Vec<f64> = (0..m).map(|r| s[r] / d[r]).collect();
        let yu: Vec<f64> = (0..m).map(|r| d[r] * y[r] / gamma).collect();
        let ax = cp.a.mul(&xu);
        let rp: Vec<f64> = (0..m).map(|r| ax[r] + su[r] - cp.b[r]).collect();
        let mut aty = vec![0.0; n];
        cp.a.tmul_add(&yu, &mut aty);
        let rd: Vec<f64> = (0..n).map(|j| cp.c[j] - aty[j]).collect();
        let pcost = dot(&cp.c, &xu);
        let dcost = dot(&cp.b, &yu);
        let pscale = inf_norm(&ax).max(inf_norm(&su)).max(inf_norm(&cp.b));
        let dscale = inf_norm(&aty).max(inf_norm(&cp.c));
        let pres = inf_norm(&rp) / (1.0 + pscale);
        let dres = inf_norm(&rd) / (1.0 + dscale);
        let gap = (pcost - dcost).abs() / (1.0 + pcost.abs().max(dcost.abs()));
        report = (pres, dres, gap, pcost, dcost);
        log::debug!("sdp iter {k} pres {pres:.3e} dres {dres:.3e} gap {gap:.3e} pcost {pcost:.9e} rho {rho:.2e}");
        if config.record_history {
            history.push(IterationRecord { iteration: k, primal_residual: pres, dual_residual: dres, gap });
        }
        if pres <= tol && dres <= tol && gap <= gap_tol {
            status = SolverStatus::Optimal;
            break;
        }
        if let Some(st) = infeasibility(&cp, &a_s, &b_s, &c_s, &x, &x_prev, &y, &y_prev) {
            status = st;
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() >= limit {
                status = SolverStatus::TimeLimit;
                break;
            }
        }
        if k % ADAPT_EVERY == 0 {
            // Residual balance in the scaled space.
            let axs = a_s.mul(&x);
            let rps: Vec<f64> = (0..m).map(|r| axs[r] + s[r] - b_s[r]).collect();
            let mut atys = vec![0.0; n];
            a_s.tmul_add(&y, &mut atys);
            let rds: Vec<f64> = (0..n).map(|j| c_s[j] - atys[j]).collect();
            let pn = inf_norm(&rps) / inf_norm(&axs).max(inf_norm(&s)).max(1e-10);
            let dn = inf_norm(&rds) / inf_norm(&atys).max(inf_norm(&c_s)).max(1e-10);
            if pn > 0.0 && dn > 0.0 {
                let new_rho = (rho * (pn / dn).sqrt()).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    if let Some(f2) = factor_for(new_rho) {
                        rho = new_rho;
                        fac = f2;
                    }
                }
            }
        }
    }

    let xu: Vec<f64> = (0..n).map(|j| e[j] * x[j]).collect();
    let values = sf.expand(&xu);
    let mut sol = RelaxationSolution::from_values(program, &values);
    sol.status = status;
    sol.iterations = iterations;
    sol.primal_residual = report.0;
    sol.dual_residual = report.1;
    sol.gap = report.2;
    sol.objective = match status {
        SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible => f64::NAN,
        _ => report.3 + sf.c0,
    };
    sol.dual_objective = Some(report.4 + sf.c0);
    sol.history = history;
    Ok(sol)
}

/// Certificates from successive iterate differences: `dy` with `A'dy = 0`
/// and `b'dy < 0` proves primal infeasibility; `dx` with `A dx` in the
/// recession cone direction and `c'dx < 0` proves unboundedness.
#[allow(clippy::too_many_arguments)]
fn infeasibility(
    cp: &ConeProblem,
    a: &Csr,
    b: &[f64],
    c: &[f64],
    x: &[f64],
    x_prev: &[f64],
    y: &[f64],
    y_prev: &[f64],
) -> Option<SolverStatus> {
    const EPS: f64 = 1e-7;
    let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let ny = inf_norm(&dy);
    if ny > 1e-6 {
        let mut atdy = vec![0.0; x.len()];
        a.tmul_add(&dy, &mut atdy);
        // With the iteration's sign convention, a primal infeasibility
        // certificate has b'dy > 0 and dy in the polar of the cone.
        let polar_ok = cp.cones.iter().zip(&dy).all(|(cone, &v)| match cone {
            Cone::NonNeg => v <= EPS * ny,
            _ => true,
        });
        if polar_ok && inf_norm(&atdy) <= EPS * ny && dot(b, &dy) > EPS * ny {
            return Some(SolverStatus::PrimalInfeasible);
        }
    }
    let dx: Vec<f64> = x.iter().zip(x_prev).map(|(a, b)| a - b).collect();
    let nx = inf_norm(&dx);
    if nx > 1e-6 && dot(c, &dx) < -EPS * nx {
        let adx = a.mul(&dx);
        let rec_ok = cp.cones.iter().zip(&adx).all(|(cone, &v)| match cone {
            Cone::Zero => v.abs() <= EPS * nx,
            Cone::NonNeg => v <= EPS * nx,
            Cone::Psd(_) => true,
        });
        let psd_ok = cp.psd.iter().all(|&(start, order)| {
            let len = order * (order + 1) / 2;
            let neg: Vec<f64> = adx[start..start + len].iter().map(|v| -v).collect();
            let mmat = svec_to_mat(&neg, order);
            let proj = super::eig::project_psd(&mmat);
            (proj - mmat).amax() <= EPS * nx
        });
        if rec_ok && psd_ok {
            return Some(SolverStatus::DualInfeasible);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use crate::relax::{AffineExpr, ConicProgram, Layout, ProgramMeta, PsdConstraint, Var};
    use crate::solver::{solve_lp, solve_sdp, SolverConfig, SolverStatus};

    fn program() -> ConicProgram {
        ConicProgram::new(ProgramMeta { kind: None, layout: Layout::Generic, n: 0, k: 0, spec: None })
    }

    fn psd_of_block(p: &mut ConicProgram, blk: usize, order: usize) {
        let mut entries = Vec::new();
        for i in 0..order {
            for j in i..order {
                entries.push((i, j, AffineExpr::var(Var::mat(blk, i, j))));
            }
        }
        p.psd.push(PsdConstraint { name: "Z".into(), order, entries });
    }

    #[test]
    fn trace_with_unit_diagonal() {
        let mut p = program();
        let z = p.add_matrix_block("Z", 3);
        for i in 0..3 {
            p.objective.add(Var::mat(z, i, i), 1.0);
            p.add_eq(vec![(Var::mat(z, i, i), 1.0)], 1.0);
        }
        psd_of_block(&mut p, z, 3);
        let sol = solve_sdp(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn max_cut_like_sdp() {
        // min 2 * sum_{i<j} z_ij with unit diagonal: 1'Z1 = 3 + 2 sum >= 0,
        // attained by off-diagonals -1/2, so the optimum is -3.
        let mut p = program();
        let z = p.add_matrix_block("Z", 3);
        for i in 0..3 {
            p.add_eq(vec![(Var::mat(z, i, i), 1.0)], 1.0);
            for j in (i + 1)..3 {
                p.objective.add(Var::mat(z, i, j), 2.0);
            }
        }
        psd_of_block(&mut p, z, 3);
        let sol = solve_sdp(&p, &SolverConfig::default().with_tolerance(1e-8)).unwrap();
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.objective + 3.0).abs() < 1e-6, "{}", sol.objective);
    }

    #[test]
    fn agrees_with_lp_backend_without_psd() {
        let mut p = program();
        let v = p.add_vector_block("v", 3);
        let x = |i| Var::vec(v, i);
        p.objective.add(x(0), 2.0);
        p.objective.add(x(1), 3.0);
        p.objective.add(x(2), 1.0);
        p.add_eq(vec![(x(0), 1.0), (x(1), 1.0), (x(2), 1.0)], 1.0);
        p.add_ge(vec![(x(0), 1.0)], 0.2);
        p.add_ge(vec![(x(1), 1.0)], 0.0);
        p.add_ge(vec![(x(2), 1.0)], 0.0);
        p.add_le(vec![(x(2), 1.0)], 0.5);
        let cfg = SolverConfig::default().with_tolerance(1e-9);
        let a = solve_sdp(&p, &cfg).unwrap();
        let b = solve_lp(&p, &SolverConfig::default()).unwrap();
        assert_eq!(a.status, SolverStatus::Optimal);
        assert!((a.objective - b.objective).abs() <= 1e-5 * (1.0 + b.objective.abs()));
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = program();
        let v = p.add_vector_block("v", 1);
        p.objective.add(Var::vec(v, 0), 1.0);
        p.add_ge(vec![(Var::vec(v, 0), 1.0)], 2.0);
        p.add_le(vec![(Var::vec(v, 0), 1.0)], 1.0);
        let sol = solve_sdp(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::PrimalInfeasible);
    }
}
