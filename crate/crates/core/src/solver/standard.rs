//! Lowering of a [`ConicProgram`] to the flat form
//! `min c'v + c0  s.t.  A v = b,  G v <= h,  E_k(v) PSD`.
//!
//! Equalities with a single remaining variable are substituted out; this
//! removes `diag(M) = 1` and symmetry-breaking pins before any solver runs.

use crate::relax::{ConicProgram, Var};

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub(crate) struct Csr {
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn new() -> Self {
        Self { ptr: vec![0], idx: Vec::new(), val: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.ptr[r], self.ptr[r + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(j, v) in entries {
            self.idx.push(j);
            self.val.push(v);
        }
        self.ptr.push(self.idx.len());
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
    }

    /// `y = self * x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row_dot(r, x)).collect()
    }

    /// `out += self' * y`.
    pub fn tmul_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let (idx, val) = self.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                out[j] += v * yr;
            }
        }
    }

    pub fn scale_row(&mut self, r: usize, f: f64) {
        let (a, b) = (self.ptr[r], self.ptr[r + 1]);
        for v in &mut self.val[a..b] {
            *v *= f;
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Csr {
        let mut out = Csr::new();
        for &r in rows {
            let (idx, val) = self.row(r);
            let e: Vec<(usize, f64)> = idx.iter().copied().zip(val.iter().copied()).collect();
            out.push_row(&e);
        }
        out
    }

    pub fn append(&mut self, other: &Csr) {
        for r in 0..other.rows() {
            let (idx, val) = other.row(r);
            let e: Vec<(usize, f64)> = idx.iter().copied().zip(val.iter().copied()).collect();
            self.push_row(&e);
        }
    }
}

/// One PSD constraint in standard form: upper-triangular entries listed
/// column by column (`(0,0),(0,1),(1,1),...`), each an affine function of
/// the free variables.
#[derive(Debug, Clone)]
pub(crate) struct StdPsd {
    pub order: usize,
    /// `rows.row(e)` and `consts[e]` give entry `entries[e]`.
    pub entries: Vec<(usize, usize)>,
    pub rows: Csr,
    pub consts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Free(usize),
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub n: usize,
    pub c: Vec<f64>,
    pub c0: f64,
    pub a: Csr,
    pub b: Vec<f64>,
    pub g: Csr,
    pub h: Vec<f64>,
    pub psd: Vec<StdPsd>,
    /// Original variable index -> free index or fixed value.
    pub map: Vec<Slot>,
    /// Set when presolve proves the constraints inconsistent.
    pub infeasible: bool,
}

fn merge(terms: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = terms.collect();
    v.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (j, c) in v {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += c,
            _ => out.push((j, c)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

fn indexed(p: &ConicProgram, terms: &[(Var, f64)]) -> Vec<(usize, f64)> {
    merge(terms.iter().map(|(v, c)| (p.var_index(*v), *c)))
}

/// Substitutes fixed values; returns the free-index terms and the constant.
fn substitute(terms: &[(usize, f64)], map: &[Slot]) -> (Vec<(usize, f64)>, f64) {
    let mut out = Vec::with_capacity(terms.len());
    let mut k = 0.0;
    for &(j, c) in terms {
        match map[j] {
            Slot::Free(f) => out.push((f, c)),
            Slot::Fixed(v) => k += c * v,
        }
    }
    (out, k)
}

pub(crate) fn lower(p: &ConicProgram) -> StandardForm {
    let nv = p.var_count();
    let eqs: Vec<(Vec<(usize, f64)>, f64)> =
        p.equalities.iter().map(|e| (indexed(p, &e.terms), e.rhs)).collect();

    // Singleton substitution to a fixed point.
    let mut fixed: Vec<Option<f64>> = vec![None; nv];
    let mut used = vec![false; eqs.len()];
    let mut infeasible = false;
    loop {
        let mut changed = false;
        for (r, (terms, rhs)) in eqs.iter().enumerate() {
            if used[r] {
                continue;
            }
            let mut rest = *rhs;
            let mut open = Vec::new();
            for &(j, c) in terms {
                match fixed[j] {
                    Some(v) => rest -= c * v,
                    None => open.push((j, c)),
                }
            }
            if open.len() == 1 {
                let (j, c) = open[0];
                fixed[j] = Some(rest / c);
                used[r] = true;
                changed = true;
            } else if open.is_empty() {
                used[r] = true;
                if rest.abs() > 1e-9 * (1.0 + rhs.abs()) {
                    infeasible = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut map = Vec::with_capacity(nv);
    let mut n = 0;
    for f in &fixed {
        match f {
            Some(v) => map.push(Slot::Fixed(*v)),
            None => {
                map.push(Slot::Free(n));
                n += 1;
            }
        }
    }

    let obj = indexed(p, &p.objective.terms);
    let (obj_free, obj_k) = substitute(&obj, &map);
    let mut c = vec![0.0; n];
    for (j, v) in obj_free {
        c[j] += v;
    }
    let c0 = p.objective.constant + obj_k;

    let mut a = Csr::new();
    let mut b = Vec::new();
    for (r, (terms, rhs)) in eqs.iter().enumerate() {
        if used[r] {
            continue;
        }
        let (t, k) = substitute(terms, &map);
        a.push_row(&t);
        b.push(rhs - k);
    }

    let mut g = Csr::new();
    let mut h = Vec::new();
    for ineq in &p.inequalities {
        let (t, k) = substitute(&indexed(p, &ineq.terms), &map);
        let rhs = ineq.rhs - k;
        if t.is_empty() {
            if rhs < -1e-9 * (1.0 + ineq.rhs.abs()) {
                infeasible = true;
            }
            continue;
        }
        g.push_row(&t);
        h.push(rhs);
    }

    let mut psd = Vec::with_capacity(p.psd.len());
    for con in &p.psd {
        let mut dense: Vec<Option<&crate::relax::AffineExpr>> = vec![None; con.order * con.order];
        for (i, j, e) in &con.entries {
            let (i, j) = if i <= j { (*i, *j) } else { (*j, *i) };
            dense[j * con.order + i] = Some(e);
        }
        let mut entries = Vec::new();
        let mut rows = Csr::new();
        let mut consts = Vec::new();
        for j in 0..con.order {
            for i in 0..=j {
                entries.push((i, j));
                match dense[j * con.order + i] {
                    Some(e) => {
                        let (t, k) = substitute(&indexed(p, &e.terms), &map);
                        rows.push_row(&t);
                        consts.push(e.constant + k);
                    }
                    None => {
                        rows.push_row(&[]);
                        consts.push(0.0);
                    }
                }
            }
        }
        psd.push(StdPsd { order: con.order, entries, rows, consts });
    }

    StandardForm { n, c, c0, a, b, g, h, psd, map, infeasible }
}

impl StandardForm {
    /// Expands free values back to the full variable vector.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.map
            .iter()
            .map(|s| match s {
                Slot::Free(j) => free[*j],
                Slot::Fixed(v) => *v,
            })
            .collect()
    }
}

/// Indices of a maximal linearly independent subset of the rows of `a`,
/// found by diagonally pivoted Cholesky on the row-normalized Gram matrix.
pub(crate) fn independent_rows(a: &Csr, n: usize, tol: f64) -> Vec<usize> {
    let p = a.rows();
    if p == 0 {
        return Vec::new();
    }
    let norms: Vec<f64> = (0..p)
        .map(|r| a.row(r).1.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut gram = vec![0.0; p * p];
    let mut work = vec![0.0; n];
    for r in 0..p {
        if norms[r] == 0.0 {
            continue;
        }
        let (idx, val) = a.row(r);
        for (&j, &v) in idx.iter().zip(val) {
            work[j] = v / norms[r];
        }
        for s in r..p {
            if norms[s] == 0.0 {
                continue;
            }
            let (si, sv) = a.row(s);
            let d: f64 = si.iter().zip(sv).map(|(&j, &v)| work[j] * v).sum::<f64>() / norms[s];
            gram[r * p + s] = d;
            gram[s * p + r] = d;
        }
        for &j in idx {
            work[j] = 0.0;
        }
    }
    // Pivoted Cholesky, in place on a copy.
    let mut diag: Vec<f64> = (0..p).map(|i| gram[i * p + i]).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut lcols: Vec<Vec<f64>> = Vec::new();
    let mut active = vec![true; p];
    loop {
        let mut best = None;
        let mut best_val = tol;
        for i in 0..p {
            if active[i] && diag[i] > best_val {
                best_val = diag[i];
                best = Some(i);
            }
        }
        let Some(piv) = best else { break };
        active[piv] = false;
        let root = diag[piv].sqrt();
        let mut col = vec![0.0; p];
        for i in 0..p {
            if !active[i] {
                continue;
            }
            let mut v = gram[i * p + piv];
            for l in &lcols {
                v -= l[i] * l[piv];
            }
            col[i] = v / root;
            diag[i] -= col[i] * col[i];
        }
        col[piv] = root;
        lcols.push(col);
        chosen.push(piv);
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relax::{Layout, ProgramMeta};

    fn meta() -> ProgramMeta {
        ProgramMeta { kind: None, layout: Layout::Generic, n: 0, k: 0, spec: None }
    }

    #[test]
    fn singleton_equalities_are_substituted() {
        let mut p = ConicProgram::new(meta());
        let b = p.add_vector_block("x", 3);
        p.add_eq(vec![(Var::vec(b, 0), 2.0)], 4.0);
        p.add_eq(vec![(Var::vec(b, 0), 1.0), (Var::vec(b, 1), 1.0)], 5.0);
        p.add_le(vec![(Var::vec(b, 2), 1.0), (Var::vec(b, 1), 1.0)], 10.0);
        p.objective.add(Var::vec(b, 1), 3.0);
        let s = lower(&p);
        assert!(!s.infeasible);
        assert_eq!(s.n, 1);
        assert_eq!(s.map[0], Slot::Fixed(2.0));
        assert_eq!(s.map[1], Slot::Fixed(3.0));
        assert_eq!(s.c0, 9.0);
        assert_eq!(s.h, vec![7.0]);
        assert_eq!(s.a.rows(), 0);
    }

    #[test]
    fn conflicting_pins_flag_infeasible() {
        let mut p = ConicProgram::new(meta());
        let b = p.add_vector_block("x", 1);
        p.add_eq(vec![(Var::vec(b, 0), 1.0)], 1.0);
        p.add_eq(vec![(Var::vec(b, 0), 1.0)], 2.0);
        assert!(lower(&p).infeasible);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let mut a = Csr::new();
        a.push_row(&[(0, 1.0), (1, 1.0)]);
        a.push_row(&[(1, 1.0), (2, 1.0)]);
        a.push_row(&[(0, 1.0), (1, 2.0), (2, 1.0)]);
        a.push_row(&[(3, 5.0)]);
        let keep = independent_rows(&a, 4, 1e-9);
        assert_eq!(keep.len(), 3);
        assert!(keep.contains(&3));
    }
}
