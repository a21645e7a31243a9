//! Structured solver for the quasi-definite systems
//!
//! ```text
//! [ Hd   A_L'      A_C' ] [u  ]   [f  ]
//! [ A_L  -W_L^-1   0    ] [v_L] = [g_L]
//! [ A_C  0         -C0  ] [v_C]   [g_C]
//! ```
//!
//! `Hd` and `C0` are diagonal. Local rows are folded into the primal block.
//! Variables occurring in at most one variable-sharing local row pattern
//! ("eliminable", typically the matrix entries of a relaxation) have a
//! diagonal pivot and are removed first, which leaves two small dense
//! systems: one over the remaining primal variables and one over the
//! coupling rows.

use super::standard::Csr;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub(crate) struct KktStructure {
    n: usize,
    local: Csr,
    coupling: Csr,
    /// Dense index among non-eliminated variables, if not eliminated.
    dense_of: Vec<Option<usize>>,
    dense_vars: Vec<usize>,
    elim_vars: Vec<usize>,
    /// For each local row, the eliminated variable it contains.
    row_elim: Vec<Option<usize>>,
    /// For each eliminated var: its local rows.
    elim_rows: Vec<Vec<usize>>,
    /// For each eliminated var: (coupling row, coefficient).
    elim_coupling: Vec<Vec<(usize, f64)>>,
}

impl KktStructure {
    pub fn new(n: usize, local: Csr, coupling: Csr) -> Self {
        let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..local.rows() {
            for &j in local.row(r).0 {
                rows_of[j].push(r);
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&j| !rows_of[j].is_empty()).collect();
        order.sort_by_key(|&j| (rows_of[j].len(), j));
        let mut row_elim: Vec<Option<usize>> = vec![None; local.rows()];
        let mut elim_pos: Vec<Option<usize>> = vec![None; n];
        let mut elim_vars = Vec::new();
        for j in order {
            if rows_of[j].iter().all(|&r| row_elim[r].is_none()) {
                for &r in &rows_of[j] {
                    row_elim[r] = Some(j);
                }
                elim_pos[j] = Some(elim_vars.len());
                elim_vars.push(j);
            }
        }
        let mut dense_of = vec![None; n];
        let mut dense_vars = Vec::new();
        for j in 0..n {
            if elim_pos[j].is_none() {
                dense_of[j] = Some(dense_vars.len());
                dense_vars.push(j);
            }
        }
        let elim_rows: Vec<Vec<usize>> = elim_vars.iter().map(|&j| rows_of[j].clone()).collect();
        let mut elim_coupling: Vec<Vec<(usize, f64)>> = vec![Vec::new(); elim_vars.len()];
        for c in 0..coupling.rows() {
            let (idx, val) = coupling.row(c);
            for (&j, &v) in idx.iter().zip(val) {
                if let Some(p) = elim_pos[j] {
                    elim_coupling[p].push((c, v));
                }
            }
        }
        Self {
            n,
            local,
            coupling,
            dense_of,
            dense_vars,
            elim_vars,
            row_elim,
            elim_rows,
            elim_coupling,
        }
    }

    #[cfg(test)]
    pub fn dense_count(&self) -> usize {
        self.dense_vars.len()
    }

    /// Factorizes for the given diagonal `hd` (length n), local weights
    /// `w` (one per local row, > 0) and coupling diagonal `c0`.
    pub fn factor(&self, hd: &[f64], w: &[f64], c0: &[f64]) -> Option<KktFactor<'_>> {
        let nx = self.dense_vars.len();
        let nc = self.coupling.rows();
        let ne = self.elim_vars.len();

        let mut dm = vec![0.0; ne];
        // Sparse H_mx rows keyed by dense index.
        let mut hmx: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ne];
        let mut p = DMatrix::<f64>::zeros(nx, nx);
        for (k, &j) in self.dense_vars.iter().enumerate() {
            p[(k, k)] = hd[j];
        }
        for (e, &m) in self.elim_vars.iter().enumerate() {
            let hm = hd[m];
            let mut u_sum = hm;
            // (u_r, b_r) with b_r sparse over dense indices.
            let mut parts: Vec<(f64, Vec<(usize, f64)>)> = Vec::with_capacity(self.elim_rows[e].len());
            let mut h_row: Vec<(usize, f64)> = Vec::new();
            for &r in &self.elim_rows[e] {
                let (idx, val) = self.local.row(r);
                let am = idx.iter().zip(val).find(|(&j, _)| j == m).map(|(_, &v)| v).unwrap();
                let ur = w[r] * am * am;
                u_sum += ur;
                let br: Vec<(usize, f64)> = idx
                    .iter()
                    .zip(val)
                    .filter(|(&j, _)| j != m)
                    .map(|(&j, &v)| (self.dense_of[j].unwrap(), v / am))
                    .collect();
                for &(d, bv) in &br {
                    h_row.push((d, w[r] * am * am * bv));
                }
                parts.push((ur, br));
            }
            dm[e] = u_sum;
            // Stable Schur update: (1/U)[sum_{r<t} u_r u_t (b_r-b_t)(b_r-b_t)' + hm sum u_r b_r b_r'].
            let inv = 1.0 / u_sum;
            for r in 0..parts.len() {
                let (ur, ref br) = parts[r];
                if hm != 0.0 {
                    add_outer(&mut p, br, br, hm * ur * inv);
                }
                for t in (r + 1)..parts.len() {
                    let (ut, ref bt) = parts[t];
                    let diff = sparse_sub(br, bt);
                    add_outer(&mut p, &diff, &diff, ur * ut * inv);
                }
            }
            hmx[e] = compress(h_row);
        }
        for r in 0..self.local.rows() {
            if self.row_elim[r].is_none() {
                let (idx, val) = self.local.row(r);
                let a: Vec<(usize, f64)> =
                    idx.iter().zip(val).map(|(&j, &v)| (self.dense_of[j].unwrap(), v)).collect();
                add_outer(&mut p, &a, &a, w[r]);
            }
        }

        // B = A_Cx - A_Cm D^-1 H_mx ; C = C0 + A_Cm D^-1 A_Cm'.
        let mut bmat = DMatrix::<f64>::zeros(nc, nx);
        let mut cmat = DMatrix::<f64>::zeros(nc, nc);
        for c in 0..nc {
            cmat[(c, c)] = c0[c];
            let (idx, val) = self.coupling.row(c);
            for (&j, &v) in idx.iter().zip(val) {
                if let Some(d) = self.dense_of[j] {
                    bmat[(c, d)] += v;
                }
            }
        }
        for e in 0..ne {
            let inv = 1.0 / dm[e];
            let col = &self.elim_coupling[e];
            for &(c, a) in col {
                for &(d, hv) in &hmx[e] {
                    bmat[(c, d)] -= a * inv * hv;
                }
                for &(c2, a2) in col {
                    cmat[(c, c2)] += a * a2 * inv;
                }
            }
        }

        let chol_p = if nx > 0 { Some(robust_cholesky(p)?) } else { None };
        let s = match &chol_p {
            Some(cp) => {
                let y = cp.l().solve_lower_triangular(&bmat.transpose())?;
                &cmat + y.tr_mul(&y)
            }
            None => cmat,
        };
        let chol_s = if nc > 0 { Some(robust_cholesky(s)?) } else { None };
        Some(KktFactor {
            st: self,
            hd: hd.to_vec(),
            w: w.to_vec(),
            c0: c0.to_vec(),
            dm,
            hmx,
            bmat,
            chol_p,
            chol_s,
        })
    }
}

fn compress(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (j, x) in v {
        match out.last_mut() {
            Some(l) if l.0 == j => l.1 += x,
            _ => out.push((j, x)),
        }
    }
    out
}

fn sparse_sub(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = a.to_vec();
    v.extend(b.iter().map(|&(j, x)| (j, -x)));
    compress(v)
}

fn add_outer(p: &mut DMatrix<f64>, a: &[(usize, f64)], b: &[(usize, f64)], s: f64) {
    for &(i, x) in a {
        for &(j, y) in b {
            p[(i, j)] += s * x * y;
        }
    }
}

/// Cholesky with escalating diagonal jitter for near-singular inputs.
fn robust_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut jitter = 1e-14 * scale;
    for _ in 0..12 {
        let mut t = m.clone();
        for i in 0..t.nrows() {
            t[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(t) {
            return Some(c);
        }
        jitter *= 100.0;
    }
    None
}

pub(crate) struct KktFactor<'a> {
    st: &'a KktStructure,
    hd: Vec<f64>,
    w: Vec<f64>,
    c0: Vec<f64>,
    dm: Vec<f64>,
    hmx: Vec<Vec<(usize, f64)>>,
    bmat: DMatrix<f64>,
    chol_p: Option<Cholesky<f64, Dyn>>,
    chol_s: Option<Cholesky<f64, Dyn>>,
}

pub(crate) struct KktSolution {
    pub u: Vec<f64>,
    pub v_local: Vec<f64>,
    pub v_coupling: Vec<f64>,
}

impl KktFactor<'_> {
    /// Solves the reduced system `[H A_C'; A_C -C0][u; v] = [f; g]`
    /// with `H = Hd + sum_L w a a'` using the factorization.
    fn solve_reduced(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let st = self.st;
        let nx = st.dense_vars.len();
        let nc = st.coupling.rows();
        let mut rx = DVector::<f64>::from_iterator(nx, st.dense_vars.iter().map(|&j| f[j]));
        let mut rc = DVector::<f64>::from_column_slice(g);
        for (e, &m) in st.elim_vars.iter().enumerate() {
            let q = f[m] / self.dm[e];
            if q == 0.0 {
                continue;
            }
            for &(d, hv) in &self.hmx[e] {
                rx[d] -= hv * q;
            }
            for &(c, a) in &st.elim_coupling[e] {
                rc[c] -= a * q;
            }
        }
        let (ux, v) = match (&self.chol_p, &self.chol_s) {
            (Some(cp), Some(cs)) => {
                let prx = cp.solve(&rx);
                let rhs = &self.bmat * prx - &rc;
                let v = cs.solve(&rhs);
                let ux = cp.solve(&(&rx - self.bmat.tr_mul(&v)));
                (ux, v)
            }
            (Some(cp), None) => (cp.solve(&rx), DVector::zeros(0)),
            (None, Some(cs)) => (DVector::zeros(0), cs.solve(&(-&rc))),
            (None, None) => (DVector::zeros(0), DVector::zeros(0)),
        };
        let mut u = vec![0.0; st.n];
        for (k, &j) in st.dense_vars.iter().enumerate() {
            u[j] = ux[k];
        }
        for (e, &m) in st.elim_vars.iter().enumerate() {
            let mut r = f[m];
            for &(d, hv) in &self.hmx[e] {
                r -= hv * ux[d];
            }
            for &(c, a) in &st.elim_coupling[e] {
                r -= a * v[c];
            }
            u[m] = r / self.dm[e];
        }
        let _ = nc;
        (u, v.as_slice().to_vec())
    }

    /// Applies the reduced operator with the given diagonals.
    fn apply_reduced(&self, u: &[f64], v: &[f64], hd: &[f64], c0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let st = self.st;
        let mut f: Vec<f64> = u.iter().zip(hd).map(|(a, b)| a * b).collect();
        for r in 0..st.local.rows() {
            let t = self.w[r] * st.local.row_dot(r, u);
            let (idx, val) = st.local.row(r);
            for (&j, &a) in idx.iter().zip(val) {
                f[j] += a * t;
            }
        }
        st.coupling.tmul_add(v, &mut f);
        let mut g = st.coupling.mul(u);
        for (c, gc) in g.iter_mut().enumerate() {
            *gc -= c0[c] * v[c];
        }
        (f, g)
    }

    /// Solves the full system. Iterative refinement targets the system
    /// with diagonals `hd_target` and `c0_target` (typically without the
    /// static regularization used in the factorization).
    pub fn solve(
        &self,
        f: &[f64],
        g_local: &[f64],
        g_coupling: &[f64],
        hd_target: Option<&[f64]>,
        c0_target: Option<&[f64]>,
        refine: usize,
    ) -> KktSolution {
        let st = self.st;
        let mut fr = f.to_vec();
        for r in 0..st.local.rows() {
            let t = self.w[r] * g_local[r];
            if t == 0.0 {
                continue;
            }
            let (idx, val) = st.local.row(r);
            for (&j, &a) in idx.iter().zip(val) {
                fr[j] += a * t;
            }
        }
        let hd_t = hd_target.unwrap_or(&self.hd);
        let c0_t = c0_target.unwrap_or(&self.c0);
        let (mut u, mut v) = self.solve_reduced(&fr, g_coupling);
        let norm = |x: &[f64]| x.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let target = 1e-14 * (1.0 + norm(&fr).max(norm(g_coupling)));
        for _ in 0..refine {
            let (af, ag) = self.apply_reduced(&u, &v, hd_t, c0_t);
            let ef: Vec<f64> = fr.iter().zip(&af).map(|(a, b)| a - b).collect();
            let eg: Vec<f64> = g_coupling.iter().zip(&ag).map(|(a, b)| a - b).collect();
            if norm(&ef).max(norm(&eg)) <= target {
                break;
            }
            let (du, dv) = self.solve_reduced(&ef, &eg);
            for (a, b) in u.iter_mut().zip(&du) {
                *a += b;
            }
            for (a, b) in v.iter_mut().zip(&dv) {
                *a += b;
            }
        }
        let v_local = (0..st.local.rows())
            .map(|r| self.w[r] * (st.local.row_dot(r, &u) - g_local[r]))
            .collect();
        KktSolution { u, v_local, v_coupling: v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense reference solve of the full (unreduced) system.
    fn dense_solve(
        n: usize,
        local: &Csr,
        coupling: &Csr,
        hd: &[f64],
        w: &[f64],
        c0: &[f64],
        rhs: &[f64],
    ) -> Vec<f64> {
        let nl = local.rows();
        let nc = coupling.rows();
        let t = n + nl + nc;
        let mut k = DMatrix::<f64>::zeros(t, t);
        for i in 0..n {
            k[(i, i)] = hd[i];
        }
        for r in 0..nl {
            let (idx, val) = local.row(r);
            for (&j, &a) in idx.iter().zip(val) {
                k[(n + r, j)] = a;
                k[(j, n + r)] = a;
            }
            k[(n + r, n + r)] = -1.0 / w[r];
        }
        for c in 0..nc {
            let (idx, val) = coupling.row(c);
            for (&j, &a) in idx.iter().zip(val) {
                k[(n + nl + c, j)] = a;
                k[(j, n + nl + c)] = a;
            }
            k[(n + nl + c, n + nl + c)] = -c0[c];
        }
        let sol = k.lu().solve(&DVector::from_column_slice(rhs)).unwrap();
        sol.as_slice().to_vec()
    }

    #[test]
    fn matches_dense_reference_on_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Variables 0..4 are "x", 4..10 are "m" entries: each m appears in
        // three local rows together with two x's, and in coupling rows.
        let n = 10;
        let mut local = Csr::new();
        for m in 4..10 {
            for _ in 0..3 {
                let a = rng.random_range(0..4);
                let b = (a + 1 + rng.random_range(0..3)) % 4;
                local.push_row(&[
                    (m, rng.random_range(-2.0..2.0)),
                    (a, rng.random_range(-2.0..2.0)),
                    (b, rng.random_range(-2.0..2.0)),
                ]);
            }
        }
        local.push_row(&[(0, 1.0)]);
        local.push_row(&[(1, 1.0), (2, -1.0)]);
        let mut coupling = Csr::new();
        coupling.push_row(&[(4, 1.0), (5, 1.0), (6, 1.0), (0, -2.0)]);
        coupling.push_row(&[(7, 1.0), (8, 1.0), (9, 1.0), (1, 3.0)]);
        coupling.push_row(&[(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]);
        let st = KktStructure::new(n, local.clone(), coupling.clone());
        assert_eq!(st.dense_count(), 4);
        let hd: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let w: Vec<f64> = (0..local.rows()).map(|_| rng.random_range(0.1..5.0)).collect();
        let c0: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.1)).collect();
        let rhs: Vec<f64> = (0..n + local.rows() + 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = st.factor(&hd, &w, &c0).unwrap();
        let sol = f.solve(&rhs[..n], &rhs[n..n + local.rows()], &rhs[n + local.rows()..], None, None, 2);
        let reference = dense_solve(n, &local, &coupling, &hd, &w, &c0, &rhs);
        let got: Vec<f64> =
            sol.u.iter().chain(&sol.v_local).chain(&sol.v_coupling).copied().collect();
        for (a, b) in got.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn handles_no_dense_variables() {
        let n = 3;
        let mut local = Csr::new();
        for j in 0..3 {
            local.push_row(&[(j, 1.0)]);
        }
        let mut coupling = Csr::new();
        coupling.push_row(&[(0, 1.0), (1, 1.0), (2, 1.0)]);
        let st = KktStructure::new(n, local.clone(), coupling.clone());
        assert_eq!(st.dense_count(), 0);
        let hd = vec![1e-3; 3];
        let w = vec![2.0, 3.0, 4.0];
        let c0 = vec![0.5];
        let rhs = vec![1.0, -1.0, 0.5, 0.2, 0.3, -0.1, 0.7];
        let f = st.factor(&hd, &w, &c0).unwrap();
        let sol = f.solve(&rhs[..3], &rhs[3..6], &rhs[6..], None, None, 1);
        let reference = dense_solve(n, &local, &coupling, &hd, &w, &c0, &rhs);
        let got: Vec<f64> =
            sol.u.iter().chain(&sol.v_local).chain(&sol.v_coupling).copied().collect();
        for (a, b) in got.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
