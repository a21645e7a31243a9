use crate::error::{Error, Result};
use crate::model::GramMatrix;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition `A = V diag(values) V'` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigensolver (implicit QL via nalgebra), eigenvalues sorted
/// ascending with matching eigenvector columns.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(sorted_eig(a.clone()))
}

fn sorted_eig(a: DMatrix<f64>) -> SymEig {
    let n = a.nrows();
    let e = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| e.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &e.eigenvectors.column(i));
    }
    SymEig { values, vectors }
}

/// Euclidean projection of a symmetric matrix onto the PSD cone.
pub fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let e = SymmetricEigen::new(a.clone());
    let neg = e.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if neg == 0 {
        return a.clone();
    }
    // Accumulate whichever side of the spectrum is smaller.
    let mut out;
    if neg <= n / 2 {
        out = a.clone();
        for (k, &l) in e.eigenvalues.iter().enumerate() {
            if l < 0.0 {
                let v = e.eigenvectors.column(k);
                out.ger(-l, &v, &v, 1.0);
            }
        }
    } else {
        out = DMatrix::zeros(n, n);
        for (k, &l) in e.eigenvalues.iter().enumerate() {
            if l > 0.0 {
                let v = e.eigenvectors.column(k);
                out.ger(l, &v, &v, 1.0);
            }
        }
    }
    out
}

/// Optimal value of PW2: with `P = I - 11'/N`, the objective
/// `<W, I - Z>` over `0 <= Z <= I, Z1 = 1, Tr Z = K` is minimized by
/// `Z = 11'/N + (top K-1 eigenvectors of PWP)`, giving
/// `Tr(PWP) - sum of its K-1 largest eigenvalues`.
pub fn solve_pw2_spectral(w: &GramMatrix, k: usize) -> Result<f64> {
    let n = w.len();
    if k == 0 || k > n {
        return Err(Error::SpecViolation(format!("K = {k} must lie in 1..={n}")));
    }
    let m = w.matrix();
    let row_mean: Vec<f64> = (0..n).map(|i| m.row(i).sum() / n as f64).collect();
    let total = row_mean.iter().sum::<f64>() / n as f64;
    let pwp = DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_mean[i] - row_mean[j] + total);
    let trace = pwp.trace();
    let eig = sorted_eig((&pwp + pwp.transpose()) * 0.5);
    let top: f64 = eig.values.iter().rev().take(k - 1).sum();
    Ok((trace - top).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_and_swap() {
        let e = sym_eig(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]))).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 2.0, 3.0]);
        let e = sym_eig(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(sym_eig(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn random_orthogonality_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DMatrix::from_fn(20, 20, |_, _| rng.random_range(-1.0..1.0));
        let a = &b + b.transpose();
        let e = sym_eig(&a).unwrap();
        let vtv = e.vectors.tr_mul(&e.vectors);
        assert!((vtv - DMatrix::identity(20, 20)).amax() < 1e-10);
        let rec = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((rec - &a).norm() <= 1e-8 * a.norm());
        assert!(e.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn projection_is_psd_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let a = &b + b.transpose();
        let p = project_psd(&a);
        let e = sym_eig(&((&p + p.transpose()) * 0.5)).unwrap();
        assert!(e.values[0] > -1e-12);
        assert!((project_psd(&p) - &p).amax() < 1e-10);
    }
}
