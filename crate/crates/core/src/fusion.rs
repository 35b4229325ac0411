//! CCA feature-space combination of the phonotactic and acoustic VSMs.
//!
//! With view covariances `C_pp`, `C_aa` and cross-covariance `C_pa`, the
//! whitened cross-covariance `C_pp^{-1/2} C_pa C_aa^{-1/2}` is decomposed as
//! `U Λ Vᵀ`. The canonical directions are mapped back through the whitening
//! transforms (`φ_p = C_pp^{-1/2} U`, `φ_a = C_aa^{-1/2} V`) and the shared
//! VSM is `Z_C = X̃_P φ_p ‖ X̃_A φ_a`.
//!
//! `φ_a` is stored q×c and applied directly (no transpose).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    center_rows, column_means, cross_cov, ensure_finite, inv_sqrt_psd, symmetrize, truncated_svd, Matrix, Vector,
};

pub const DEFAULT_CCA_DIM: usize = 300;

const SVD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub c_pp: Matrix,
    pub c_aa: Matrix,
    pub c_pa: Matrix,
    pub mean_p: Vector,
    pub mean_a: Vector,
}

impl CovarianceSet {
    pub fn estimate(x_p: &Matrix, x_a: &Matrix) -> Result<Self> {
        if x_p.nrows() != x_a.nrows() {
            return Err(Error::dim("CCA view rows", x_p.nrows(), x_a.nrows()));
        }
        let mean_p = column_means(x_p);
        let mean_a = column_means(x_a);
        let p = center_rows(x_p, &mean_p);
        let a = center_rows(x_a, &mean_a);
        Ok(CovarianceSet {
            c_pp: symmetrize(&cross_cov(&p, &p, false)?),
            c_aa: symmetrize(&cross_cov(&a, &a, false)?),
            c_pa: cross_cov(&p, &a, false)?,
            mean_p,
            mean_a,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    /// p×c
    pub phi_p: Matrix,
    /// q×c
    pub phi_a: Matrix,
    /// Diagonal of Λ, descending.
    pub correlations: Vector,
    pub ridge: f64,
    pub mean_p: Vector,
    pub mean_a: Vector,
}

impl CcaModel {
    pub fn dim(&self) -> usize {
        self.correlations.len()
    }

    pub fn view_dims(&self) -> (usize, usize) {
        (self.phi_p.nrows(), self.phi_a.nrows())
    }

    pub fn canonical_correlations(&self) -> &Vector {
        &self.correlations
    }

    /// Canonical variates of the phonotactic view only (N×c).
    pub fn project_p(&self, x_p: &Matrix) -> Result<Matrix> {
        project_view(x_p, &self.mean_p, &self.phi_p, "CCA phonotactic columns")
    }

    /// Canonical variates of the acoustic view only (N×c).
    pub fn project_a(&self, x_a: &Matrix) -> Result<Matrix> {
        project_view(x_a, &self.mean_a, &self.phi_a, "CCA acoustic columns")
    }
}

fn project_view(x: &Matrix, mean: &Vector, phi: &Matrix, ctx: &'static str) -> Result<Matrix> {
    if x.ncols() != phi.nrows() {
        return Err(Error::dim(ctx, phi.nrows(), x.ncols()));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let centered = x.row(i).transpose() - mean;
            (phi.tr_mul(&centered)).iter().copied().collect()
        })
        .collect();
    Ok(Matrix::from_fn(x.nrows(), phi.ncols(), |i, j| rows[i][j]))
}

pub fn fit_cca(x_p: &Matrix, x_a: &Matrix, c: usize, ridge: f64) -> Result<CcaModel> {
    let (n, p, q) = (x_p.nrows(), x_p.ncols(), x_a.ncols());
    if n != x_a.nrows() {
        return Err(Error::dim("CCA view rows", n, x_a.nrows()));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("CCA needs at least 2 rows, got {n}")));
    }
    if c == 0 || c > p.min(q) {
        return Err(Error::config("cca.dim", format!("c = {c} must lie in 1..={}", p.min(q))));
    }
    if !(ridge >= 0.0) {
        return Err(Error::config("cca.ridge", "ridge must be non-negative"));
    }
    ensure_finite(x_p, "CCA phonotactic view")?;
    ensure_finite(x_a, "CCA acoustic view")?;

    let cov = CovarianceSet::estimate(x_p, x_a)?;
    let w_p = inv_sqrt_psd(&cov.c_pp, ridge)?;
    let w_a = inv_sqrt_psd(&cov.c_aa, ridge)?;
    let whitened = &w_p * &cov.c_pa * &w_a;
    let svd = truncated_svd(&whitened, c, SVD_TOL)?;
    Ok(CcaModel {
        phi_p: &w_p * svd.u,
        phi_a: &w_a * svd.v,
        correlations: svd.s,
        ridge,
        mean_p: cov.mean_p,
        mean_a: cov.mean_a,
    })
}

/// Z_C: first c columns are phonotactic canonical variates, last c acoustic.
pub fn transform(m: &CcaModel, x_p: &Matrix, x_a: &Matrix) -> Result<Matrix> {
    if x_p.nrows() != x_a.nrows() {
        return Err(Error::dim("CCA view rows", x_p.nrows(), x_a.nrows()));
    }
    let zp = m.project_p(x_p)?;
    let za = m.project_a(x_a)?;
    crate::numerics::hcat(&[&zp, &za])
}

pub fn canonical_correlations(m: &CcaModel) -> Vector {
    m.correlations.clone()
}
