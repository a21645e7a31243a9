//! Mehrotra predictor-corrector on the homogeneous self-dual embedding of
//! `min c'x s.t. Ax = b, Gx + s = h, s >= 0`.

use super::kkt::KktStructure;
use super::standard::{independent_rows, lower, Csr, StandardForm};
use super::{dot, inf_norm, IterationRecord, SolverConfig, SolverStatus};
use crate::error::{Error, Result};
use crate::relax::{ConicProgram, RelaxationSolution};
use std::time::Instant;

const STEP: f64 = 0.99;
const REG: f64 = 1e-10;

/// Row-scaled LP data with dependent equalities removed.
struct Lp {
    n: usize,
    c: Vec<f64>,
    a: Csr,
    b: Vec<f64>,
    g: Csr,
    h: Vec<f64>,
}

fn prepare(sf: &StandardForm) -> Lp {
    let keep = independent_rows(&sf.a, sf.n, 1e-9);
    let mut a = sf.a.select_rows(&keep);
    let mut b: Vec<f64> = keep.iter().map(|&r| sf.b[r]).collect();
    let mut g = sf.g.clone();
    let mut h = sf.h.clone();
    for r in 0..a.rows() {
        let s = inf_norm(a.row(r).1);
        if s > 0.0 {
            a.scale_row(r, 1.0 / s);
            b[r] /= s;
        }
    }
    for r in 0..g.rows() {
        let s = inf_norm(g.row(r).1);
        if s > 0.0 {
            g.scale_row(r, 1.0 / s);
            h[r] /= s;
        }
    }
    Lp { n: sf.n, c: sf.c.clone(), a, b, g, h }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Metrics {
    pres: f64,
    dres: f64,
    pcost: f64,
    dcost: f64,
    /// Gap relative to the objective including its constant.
    relgap: f64,
    /// Gap relative to the linear part only; a fallback criterion when the
    /// constant cancels most of the linear part.
    relgap_raw: f64,
}

fn residuals(lp: &Lp, it: &Iterate) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let mut r1: Vec<f64> = lp.c.iter().map(|c| c * it.tau).collect();
    lp.a.tmul_add(&it.y, &mut r1);
    lp.g.tmul_add(&it.z, &mut r1);
    let ax = lp.a.mul(&it.x);
    let r2: Vec<f64> = ax.iter().zip(&lp.b).map(|(a, b)| -a + b * it.tau).collect();
    let gx = lp.g.mul(&it.x);
    let r3: Vec<f64> =
        (0..gx.len()).map(|r| it.s[r] + gx[r] - lp.h[r] * it.tau).collect();
    let r4 = it.kappa + dot(&lp.c, &it.x) + dot(&lp.b, &it.y) + dot(&lp.h, &it.z);
    (r1, r2, r3, r4)
}

fn metrics(lp: &Lp, c0: f64, it: &Iterate, r1: &[f64], r2: &[f64], r3: &[f64]) -> Metrics {
    let t = it.tau;
    let pscale = 1.0 + inf_norm(&lp.b).max(inf_norm(&lp.h));
    let pres = inf_norm(r2).max(inf_norm(r3)) / t / pscale;
    let dres = inf_norm(r1) / t / (1.0 + inf_norm(&lp.c));
    let pcost = dot(&lp.c, &it.x) / t;
    let dcost = -(dot(&lp.b, &it.y) + dot(&lp.h, &it.z)) / t;
    let relgap_raw = (pcost - dcost).abs() / (1.0 + pcost.abs().min(dcost.abs()));
    let relgap = (pcost - dcost).abs() / (1.0 + (pcost + c0).abs().min((dcost + c0).abs()));
    Metrics { pres, dres, pcost, dcost, relgap, relgap_raw }
}

pub(super) fn solve(program: &ConicProgram, config: &SolverConfig) -> Result<RelaxationSolution> {
    let start = Instant::now();
    let (tol, gap_tol, max_iter) = config.resolved(false);
    let sf = lower(program);
    if sf.infeasible {
        let values = sf.expand(&vec![0.0; sf.n]);
        let mut sol = RelaxationSolution::from_values(program, &values);
        sol.status = SolverStatus::PrimalInfeasible;
        sol.objective = f64::NAN;
        return Ok(sol);
    }
    let lp = prepare(&sf);
    let (n, p, m) = (lp.n, lp.a.rows(), lp.g.rows());
    let st = KktStructure::new(n, lp.g.clone(), lp.a.clone());
    let hd_reg = vec![REG; n];
    let c0_reg = vec![REG; p];
    let hd_zero = vec![0.0; n];
    let c0_zero = vec![0.0; p];

    // Initial point from two least-squares solves with unit scaling.
    let unit = vec![1.0; m];
    let f0 = st
        .factor(&hd_reg, &unit, &c0_reg)
        .ok_or_else(|| Error::Solver("initial KKT factorization failed".into()))?;
    let prim = f0.solve(&vec![0.0; n], &lp.h, &lp.b, Some(&hd_zero), Some(&c0_zero), 3);
    let neg_c: Vec<f64> = lp.c.iter().map(|c| -c).collect();
    let dual = f0.solve(&neg_c, &vec![0.0; m], &vec![0.0; p], Some(&hd_zero), Some(&c0_zero), 3);
    drop(f0);
    let mut s: Vec<f64> = prim.v_local.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = dual.v_local.clone();
    for v in [&mut s, &mut z] {
        let mn = v.iter().copied().fold(f64::INFINITY, f64::min);
        if m > 0 && mn < 1e-8 {
            let shift = 1.0 - mn;
            v.iter_mut().for_each(|e| *e += shift);
        }
    }
    let mut it = Iterate { x: prim.u, y: dual.v_coupling, z, s, tau: 1.0, kappa: 1.0 };

    let mut history = Vec::new();
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;
    let mut last = None;
    let mut stalls = 0;
    for k in 0..=max_iter {
        iterations = k;
        let (r1, r2, r3, r4) = residuals(&lp, &it);
        let mt = metrics(&lp, sf.c0, &it, &r1, &r2, &r3);
        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (m as f64 + 1.0);
        let rec = IterationRecord {
            iteration: k,
            primal_residual: mt.pres,
            dual_residual: mt.dres,
            gap: mt.relgap,
        };
        log::debug!(
            "lp iter {k} pres {:.3e} dres {:.3e} gap {:.3e} pcost {:.9e}",
            mt.pres,
            mt.dres,
            mt.relgap,
            mt.pcost
        );
        if config.record_history {
            history.push(rec);
        }
        if mt.pres <= tol && mt.dres <= tol && mt.relgap <= gap_tol {
            status = SolverStatus::Optimal;
            last = Some(mt);
            break;
        }
        // Infeasibility certificates once tau has collapsed relative to kappa.
        if it.tau < 1e-2 * it.kappa.max(1e-300) {
            let byhz = dot(&lp.b, &it.y) + dot(&lp.h, &it.z);
            let cx = dot(&lp.c, &it.x);
            if byhz < 0.0 {
                let mut aty = vec![0.0; n];
                lp.a.tmul_add(&it.y, &mut aty);
                lp.g.tmul_add(&it.z, &mut aty);
                if inf_norm(&aty) / (1.0 + inf_norm(&lp.c)) <= tol * -byhz {
                    status = SolverStatus::PrimalInfeasible;
                    last = Some(mt);
                    break;
                }
            }
            if cx < 0.0 {
                let ax = lp.a.mul(&it.x);
                let gx = lp.g.mul(&it.x);
                let gxs: Vec<f64> = gx.iter().zip(&it.s).map(|(a, b)| a + b).collect();
                if inf_norm(&ax).max(inf_norm(&gxs)) <= tol * -cx {
                    status = SolverStatus::DualInfeasible;
                    last = Some(mt);
                    break;
                }
            }
        }
        if k == max_iter {
            last = Some(mt);
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() >= limit {
                status = SolverStatus::TimeLimit;
                last = Some(mt);
                break;
            }
        }

        let w: Vec<f64> = it.z.iter().zip(&it.s).map(|(z, s)| z / s).collect();
        let Some(fac) = st.factor(&hd_reg, &w, &c0_reg) else {
            status = SolverStatus::NumericalFailure;
            last = Some(mt);
            break;
        };
        let solve = |f: &[f64], gl: &[f64], gc: &[f64]| {
            fac.solve(f, gl, gc, Some(&hd_zero), Some(&c0_zero), 3)
        };
        let hvec: Vec<f64> = lp.h.clone();
        let u2 = solve(&neg_c, &hvec, &lp.b);
        let denom_base = dot(&lp.c, &u2.u) + dot(&lp.b, &u2.v_coupling) + dot(&lp.h, &u2.v_local);

        // Direction for given eta, complementarity targets xi_s, xi_k.
        let direction = |eta: f64, xi_s: &[f64], xi_k: f64| {
            let f: Vec<f64> = r1.iter().map(|r| -eta * r).collect();
            let gc: Vec<f64> = r2.iter().map(|r| eta * r).collect();
            let gl: Vec<f64> =
                (0..m).map(|r| -eta * r3[r] - xi_s[r] / it.z[r]).collect();
            let u1 = solve(&f, &gl, &gc);
            let num = -eta * r4
                - xi_k / it.tau
                - (dot(&lp.c, &u1.u) + dot(&lp.b, &u1.v_coupling) + dot(&lp.h, &u1.v_local));
            let den = -it.kappa / it.tau + denom_base;
            let dtau = num / den;
            let dx: Vec<f64> = (0..n).map(|j| u1.u[j] + dtau * u2.u[j]).collect();
            let dy: Vec<f64> = (0..p).map(|j| u1.v_coupling[j] + dtau * u2.v_coupling[j]).collect();
            let dz: Vec<f64> = (0..m).map(|j| u1.v_local[j] + dtau * u2.v_local[j]).collect();
            let ds: Vec<f64> = (0..m).map(|r| (xi_s[r] - it.s[r] * dz[r]) / it.z[r]).collect();
            let dkappa = (xi_k - it.kappa * dtau) / it.tau;
            (dx, dy, dz, ds, dtau, dkappa)
        };
        let step_to_boundary = |dz: &[f64], ds: &[f64], dtau: f64, dkappa: f64| {
            let mut a = max_step(&it.s, ds).min(max_step(&it.z, dz));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // Predictor.
        let xi_aff: Vec<f64> = (0..m).map(|r| -it.s[r] * it.z[r]).collect();
        let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(1.0, &xi_aff, -it.tau * it.kappa);
        let alpha_aff = step_to_boundary(&dz_a, &ds_a, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);
        // Corrector.
        let xi_s: Vec<f64> = (0..m)
            .map(|r| sigma * mu - it.s[r] * it.z[r] - ds_a[r] * dz_a[r])
            .collect();
        let xi_k = sigma * mu - it.tau * it.kappa - dtau_a * dkappa_a;
        let (dx, dy, dz, ds, dtau, dkappa) = direction(1.0 - sigma, &xi_s, xi_k);
        let alpha = (STEP * step_to_boundary(&dz, &ds, dtau, dkappa)).min(1.0);
        if !alpha.is_finite() || alpha < 1e-12 {
            stalls += 1;
            if stalls >= 3 || !alpha.is_finite() {
                status = SolverStatus::NumericalFailure;
                last = Some(mt);
                break;
            }
            continue;
        }
        stalls = 0;
        for j in 0..n {
            it.x[j] += alpha * dx[j];
        }
        for j in 0..p {
            it.y[j] += alpha * dy[j];
        }
        for r in 0..m {
            it.z[r] += alpha * dz[r];
            it.s[r] += alpha * ds[r];
        }
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
        if it.x.iter().any(|v| !v.is_finite()) || !it.tau.is_finite() {
            status = SolverStatus::NumericalFailure;
            break;
        }
    }

    if matches!(status, SolverStatus::NumericalFailure | SolverStatus::MaxIterations) {
        if let Some(mt) = &last {
            if mt.pres <= tol && mt.dres <= tol && mt.relgap_raw <= gap_tol {
                status = SolverStatus::Optimal;
            }
        }
    }
    let tau = if matches!(status, SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible) {
        1.0
    } else {
        it.tau
    };
    let free: Vec<f64> = it.x.iter().map(|v| v / tau).collect();
    let values = sf.expand(&free);
    let mut sol = RelaxationSolution::from_values(program, &values);
    let mt = last.unwrap_or_else(|| {
        let (r1, r2, r3, _) = residuals(&lp, &it);
        metrics(&lp, sf.c0, &it, &r1, &r2, &r3)
    });
    sol.status = status;
    sol.iterations = iterations;
    sol.objective = match status {
        SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible => f64::NAN,
        _ => mt.pcost + sf.c0,
    };
    sol.dual_objective = Some(mt.dcost + sf.c0);
    sol.primal_residual = mt.pres;
    sol.dual_residual = mt.dres;
    sol.gap = mt.relgap;
    sol.history = history;
    Ok(sol)
}
