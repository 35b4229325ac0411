//! Dense linear-algebra primitives shared by every model in the crate.
//!
//! Everything here is a pure function of its inputs. Decompositions return
//! spectra sorted in descending order and apply a fixed sign convention to
//! every singular/eigen vector: the entry of largest magnitude is made
//! positive, ties resolved towards the lowest index. That keeps fitted
//! models bit-reproducible across runs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default ridge added to covariances before inversion.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Tolerance used to accept a matrix as symmetric, relative to its largest entry.
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues below this (after ridge) are treated as a genuine PSD violation.
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// n×k left singular vectors.
    pub u: Matrix,
    /// k singular values, non-negative and descending.
    pub s: Vector,
    /// m×k right singular vectors.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// U·diag(s)·Vᵀ
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct EigResult {
    /// Eigenvalues, descending.
    pub values: Vector,
    /// Eigenvectors stored column-wise, matching `values`.
    pub vectors: Matrix,
}

pub fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Index of the largest-magnitude entry, lowest index on ties.
fn pivot_index<'a>(col: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, v) in col.enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    best
}

/// Flips columns so their largest-magnitude entry is positive. Returns the
/// applied signs so paired matrices can be flipped consistently.
pub fn fix_column_signs(m: &mut Matrix) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let p = pivot_index(col.iter());
        let sign = if col.nrows() > 0 && col[p] < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            col.neg_mut();
        }
        signs.push(sign);
    }
    signs
}

fn apply_column_signs(m: &mut Matrix, signs: &[f64]) {
    for (mut col, &s) in m.column_iter_mut().zip(signs) {
        if s < 0.0 {
            col.neg_mut();
        }
    }
}

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Top-`k` singular triplets of `m`.
///
/// The decomposition is a dense thin SVD; `tol` bounds how far the rank-`k`
/// reconstruction error may sit from the Eckart–Young optimum implied by the
/// discarded spectrum, relative to ‖m‖_F.
pub fn truncated_svd(m: &Matrix, k: usize, tol: f64) -> Result<SvdResult> {
    let (n, d) = m.shape();
    let full = n.min(d);
    if k == 0 || k > full {
        return Err(Error::dim("truncated_svd rank", format!("1..={full}"), k));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("svd tolerance must be positive, got {tol}")));
    }
    ensure_finite(m, "truncated_svd input")?;

    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u_all = svd.u.expect("u requested");
    let vt_all = svd.v_t.expect("v_t requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
            .then(a.cmp(&b))
    });

    let mut u = Matrix::zeros(n, k);
    let mut v = Matrix::zeros(d, k);
    let mut s = Vector::zeros(k);
    for (j, &src) in order.iter().take(k).enumerate() {
        u.set_column(j, &u_all.column(src));
        v.set_column(j, &vt_all.row(src).transpose());
        s[j] = svd.singular_values[src].max(0.0);
    }
    let signs = fix_column_signs(&mut u);
    apply_column_signs(&mut v, &signs);

    // Eckart–Young: ‖M − U_k S_k V_kᵀ‖² = Σ_{i>k} s_i²
    let tail: f64 = order.iter().skip(k).map(|&i| svd.singular_values[i].powi(2)).sum();
    let result = SvdResult { u, s, v };
    let err = frobenius_sq(&(m - result.reconstruct())).sqrt();
    let scale = frobenius_sq(m).sqrt().max(1.0);
    if (err - tail.sqrt()).abs() > tol * scale {
        return Err(Error::Numerical(format!(
            "truncated SVD residual {err:e} deviates from optimal {:e}",
            tail.sqrt()
        )));
    }
    Ok(result)
}

pub fn is_symmetric(a: &Matrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

/// (A + Aᵀ)/2, used to scrub rounding asymmetry from computed covariances.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Full eigendecomposition of a symmetric matrix, values descending.
pub fn sym_eig(a: &Matrix) -> Result<EigResult> {
    if !a.is_square() {
        return Err(Error::dim("sym_eig", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    ensure_finite(a, "sym_eig input")?;
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::InvalidInput("sym_eig requires a symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .expect("finite eigenvalues")
            .then(x.cmp(&y))
    });
    let mut values = Vector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        values[j] = eig.eigenvalues[src];
        vectors.set_column(j, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    Ok(EigResult { values, vectors })
}

fn spectral_power(c: &Matrix, ridge: f64, power: f64) -> Result<Matrix> {
    if ridge < 0.0 {
        return Err(Error::InvalidInput(format!("ridge must be non-negative, got {ridge}")));
    }
    let n = c.nrows();
    let shifted = c + Matrix::identity(n, n) * ridge;
    let eig = sym_eig(&shifted)?;
    let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(Error::NotPsd(min));
    }
    if min <= 0.0 {
        return Err(Error::Singular("inverse power of PSD matrix"));
    }
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= eig.values[j].powf(power);
    }
    Ok(symmetrize(&(scaled * eig.vectors.transpose())))
}

/// (c + ridge·I)^{-1/2} for symmetric PSD `c`.
pub fn inv_sqrt_psd(c: &Matrix, ridge: f64) -> Result<Matrix> {
    spectral_power(c, ridge, -0.5)
}

/// (c + ridge·I)^{1/2} for symmetric PSD `c`.
pub fn sqrt_psd(c: &Matrix, ridge: f64) -> Result<Matrix> {
    spectral_power(c, ridge, 0.5)
}

/// Column means of `x` as a length-`cols` vector.
pub fn column_means(x: &Matrix) -> Vector {
    let n = x.nrows().max(1) as f64;
    Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtracts `mean` from every row.
pub fn center_rows(x: &Matrix, mean: &Vector) -> Matrix {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Sample cross-covariance (1/(N−1))·X̃ᵀỸ.
pub fn cross_cov(x: &Matrix, y: &Matrix, center: bool) -> Result<Matrix> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim("cross_cov rows", x.nrows(), y.nrows()));
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cross_cov needs at least 2 rows, got {n}")));
    }
    ensure_finite(x, "cross_cov x")?;
    ensure_finite(y, "cross_cov y")?;
    let scale = 1.0 / (n as f64 - 1.0);
    if center {
        let xc = center_rows(x, &column_means(x));
        let yc = center_rows(y, &column_means(y));
        Ok(xc.transpose() * yc * scale)
    } else {
        Ok(x.transpose() * y * scale)
    }
}

/// Solves the SPD system `a·X = b` by Cholesky; `None` if `a` is not SPD.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of an SPD matrix by Cholesky.
pub fn spd_inverse(a: &Matrix) -> Option<Matrix> {
    a.clone().cholesky().map(|c| symmetrize(&c.inverse()))
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
    let rows = parts.first().map_or(0, |m| m.nrows());
    if let Some(bad) = parts.iter().find(|m| m.nrows() != rows) {
        return Err(Error::dim("hcat rows", rows, bad.nrows()));
    }
    let cols: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for m in parts {
        out.columns_mut(at, m.ncols()).copy_from(*m);
        at += m.ncols();
    }
    Ok(out)
}

/// Selects the given rows of `x` in order.
pub fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &Matrix) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn svd_identity() {
        let r = truncated_svd(&Matrix::identity(3, 3), 3, 1e-10).unwrap();
        assert!(r.s.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn svd_diagonal_truncation() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0, 1.0]));
        let r = truncated_svd(&m, 2, 1e-10).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-12 && (r.s[1] - 2.0).abs() < 1e-12);
        let err = frobenius_sq(&(&m - r.reconstruct())).sqrt();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_rejects_bad_rank_and_nan() {
        let m = random(4, 3, 1);
        assert!(matches!(truncated_svd(&m, 0, 1e-8), Err(Error::Dimension { .. })));
        assert!(matches!(truncated_svd(&m, 4, 1e-8), Err(Error::Dimension { .. })));
        let mut bad = m.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(truncated_svd(&bad, 2, 1e-8), Err(Error::NonFinite(_))));
    }

    #[test]
    fn svd_columns_orthonormal_and_sign_fixed() {
        for (rows, cols) in [(20, 15), (7, 12)] {
            let m = random(rows, cols, 7);
            let k = rows.min(cols);
            let r = truncated_svd(&m, k, 1e-8).unwrap();
            let i = Matrix::identity(k, k);
            assert!(max_abs(&(r.u.transpose() * &r.u - &i)) < 1e-10);
            assert!(max_abs(&(r.v.transpose() * &r.v - &i)) < 1e-10);
            for col in r.u.column_iter() {
                assert!(col[pivot_index(col.iter())] > 0.0);
            }
            assert!(r.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eig_diagonal_and_2x2() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![5.0, 1.0]));
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.values.as_slice(), &[5.0, 1.0]);
        assert!(max_abs(&(&e.vectors - Matrix::identity(2, 2))) < 1e-14);

        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let b = random(10, 10, 3);
        let a = symmetrize(&(&b + b.transpose()));
        let e = sym_eig(&a).unwrap();
        let back = &e.vectors * Matrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!(max_abs(&(back - &a)) < 1e-8);
        for j in 0..10 {
            let lhs = &a * e.vectors.column(j);
            let rhs = e.vectors.column(j) * e.values[j];
            assert!((lhs - rhs).amax() < 1e-8);
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn inv_sqrt_cases() {
        let i = Matrix::identity(3, 3);
        assert!(max_abs(&(inv_sqrt_psd(&i, 0.0).unwrap() - &i)) < 1e-14);
        // applied twice to I stays I
        let twice = inv_sqrt_psd(&inv_sqrt_psd(&i, 0.0).unwrap(), 0.0).unwrap();
        assert!(max_abs(&(twice - &i)) < 1e-14);

        let d = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        let b = inv_sqrt_psd(&d, 0.0).unwrap();
        let expect = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!(max_abs(&(b - expect)) < 1e-14);

        let g = random(6, 4, 11);
        let c = &g * g.transpose(); // rank 4, PSD
        let b = inv_sqrt_psd(&c, 1e-6).unwrap();
        let cr = &c + Matrix::identity(6, 6) * 1e-6;
        assert!(max_abs(&(&b * cr * &b - Matrix::identity(6, 6))) < 1e-8);
    }

    #[test]
    fn inv_sqrt_errors() {
        let neg = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(inv_sqrt_psd(&neg, 0.0), Err(Error::NotPsd(_))));
        let sing = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(inv_sqrt_psd(&sing, 0.0), Err(Error::Singular(_))));
        assert!(inv_sqrt_psd(&sing, 1e-6).is_ok());
    }

    #[test]
    fn cross_cov_hand_case() {
        let x = Matrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let c = cross_cov(&x, &x, true).unwrap();
        assert!((c[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(matches!(
            cross_cov(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2), true),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn cross_cov_matches_loop() {
        let x = random(50, 3, 21);
        let y = random(50, 2, 22);
        let c = cross_cov(&x, &y, true).unwrap();
        let mx: Vec<f64> = (0..3).map(|j| (0..50).map(|i| x[(i, j)]).sum::<f64>() / 50.0).collect();
        let my: Vec<f64> = (0..2).map(|j| (0..50).map(|i| y[(i, j)]).sum::<f64>() / 50.0).collect();
        for a in 0..3 {
            for b in 0..2 {
                let mut s = 0.0;
                for i in 0..50 {
                    s += (x[(i, a)] - mx[a]) * (y[(i, b)] - my[b]);
                }
                assert!((c[(a, b)] - s / 49.0).abs() < 1e-12);
            }
        }
        let cxx = cross_cov(&x, &x, true).unwrap();
        assert!(is_symmetric(&cxx, 1e-12));
        assert!(sym_eig(&cxx).unwrap().values.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn hcat_and_select() {
        let a = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = Matrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let c = hcat(&[&a, &b]).unwrap();
        assert_eq!(c, Matrix::from_row_slice(2, 3, &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]));
        assert_eq!(select_rows(&c, &[1]), Matrix::from_row_slice(1, 3, &[2.0, 5.0, 6.0]));
        assert!(hcat(&[&a, &Matrix::zeros(3, 1)]).is_err());
    }
}
