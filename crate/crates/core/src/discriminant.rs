//! Linear discriminant analysis and within-class covariance normalization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    center_rows, column_means, ensure_finite, fix_column_signs, inv_sqrt_psd, spd_inverse, sym_eig, symmetrize,
    Matrix, Vector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// D×m projection.
    pub w: Matrix,
    /// Generalized eigenvalues of the kept directions, descending.
    pub eigenvalues: Vector,
    /// C×D
    pub class_means: Matrix,
    pub global_mean: Vector,
    pub ridge: f64,
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WccnModel {
    /// Lower-triangular b with b·bᵀ = (W + ridge·I)⁻¹.
    pub b: Matrix,
    pub ridge: f64,
}

/// Order in which the two post-processing transforms are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    #[default]
    LdaWccn,
    WccnLda,
}

/// Classes present in `labels` (sorted) and their member row indices.
fn class_members(labels: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let members = classes
        .iter()
        .map(|&c| labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect())
        .collect();
    (classes, members)
}

fn check_inputs(x: &Matrix, labels: &[usize]) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    if x.nrows() != labels.len() {
        return Err(Error::dim("labels per row", x.nrows(), labels.len()));
    }
    ensure_finite(x, "discriminant input")?;
    let (classes, members) = class_members(labels);
    if let Some((c, m)) = classes.iter().zip(&members).find(|(_, m)| m.len() < 2) {
        return Err(Error::InsufficientData(format!("class {c} has {} sample(s); at least 2 required", m.len())));
    }
    Ok((classes, members))
}

fn class_mean(x: &Matrix, rows: &[usize]) -> Vector {
    let mut mu = Vector::zeros(x.ncols());
    for &i in rows {
        mu += x.row(i).transpose();
    }
    mu / rows.len() as f64
}

/// Σ over members of (x − μ)(x − μ)ᵀ.
fn scatter_about(x: &Matrix, rows: &[usize], mu: &Vector) -> Matrix {
    let d = x.ncols();
    let mut centered = Matrix::zeros(rows.len(), d);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..d {
            centered[(r, j)] = x[(i, j)] - mu[j];
        }
    }
    centered.tr_mul(&centered)
}

/// Within- and between-class scatter, each sample weighted equally.
pub fn scatter_matrices(x: &Matrix, labels: &[usize]) -> Result<(Matrix, Matrix)> {
    let (_, members) = check_inputs(x, labels)?;
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mu = column_means(x);
    let mut sw = Matrix::zeros(d, d);
    let mut sb = Matrix::zeros(d, d);
    for rows in &members {
        let mc = class_mean(x, rows);
        sw += scatter_about(x, rows, &mc);
        let diff = &mc - &mu;
        sb += &diff * diff.transpose() * rows.len() as f64;
    }
    Ok((symmetrize(&(sw / n)), symmetrize(&(sb / n))))
}

pub fn fit_lda(x: &Matrix, labels: &[usize], m: usize, ridge: f64) -> Result<LdaModel> {
    let (classes, members) = check_inputs(x, labels)?;
    let c = classes.len();
    if m == 0 || m + 1 > c || m > x.ncols() {
        return Err(Error::config(
            "discriminant.lda_dim",
            format!("m = {m} must satisfy 1 ≤ m ≤ min(C−1, D) = {}", (c.saturating_sub(1)).min(x.ncols())),
        ));
    }
    let (sw, sb) = scatter_matrices(x, labels)?;
    let whiten = inv_sqrt_psd(&sw, ridge)?;
    let eig = sym_eig(&symmetrize(&(&whiten * sb * &whiten)))?;
    let mut w = &whiten * eig.vectors.columns(0, m);
    fix_column_signs(&mut w);
    let class_means = Matrix::from_fn(c, x.ncols(), |_, _| 0.0);
    let mut class_means = class_means;
    for (k, rows) in members.iter().enumerate() {
        class_means.set_row(k, &class_mean(x, rows).transpose());
    }
    Ok(LdaModel {
        w,
        eigenvalues: eig.values.rows(0, m).into_owned(),
        class_means,
        global_mean: column_means(x),
        ridge,
    })
}

pub fn transform_lda(m: &LdaModel, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != m.w.nrows() {
        return Err(Error::dim("LDA input columns", m.w.nrows(), x.ncols()));
    }
    Ok(center_rows(x, &m.global_mean) * &m.w)
}

/// Mean over classes of each class's covariance (1/n_c normalization).
pub fn within_class_covariance(x: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let (classes, members) = check_inputs(x, labels)?;
    let d = x.ncols();
    let mut w = Matrix::zeros(d, d);
    for rows in &members {
        let mc = class_mean(x, rows);
        w += scatter_about(x, rows, &mc) / rows.len() as f64;
    }
    Ok(symmetrize(&(w / classes.len() as f64)))
}

pub fn fit_wccn(x: &Matrix, labels: &[usize], ridge: f64) -> Result<WccnModel> {
    if !(ridge >= 0.0) {
        return Err(Error::config("discriminant.wccn_ridge", "ridge must be non-negative"));
    }
    let w = within_class_covariance(x, labels)?;
    let d = w.nrows();
    let shifted = w + Matrix::identity(d, d) * ridge;
    let inv = spd_inverse(&shifted).ok_or(Error::Singular("within-class covariance"))?;
    let chol = inv.cholesky().ok_or(Error::Singular("inverse within-class covariance"))?;
    Ok(WccnModel { b: chol.l(), ridge })
}

pub fn transform_wccn(m: &WccnModel, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != m.b.nrows() {
        return Err(Error::dim("WCCN input columns", m.b.nrows(), x.ncols()));
    }
    Ok(x * &m.b)
}

/// Fitted LDA and WCCN in a fixed composition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessor {
    pub order: Composition,
    pub lda: LdaModel,
    pub wccn: WccnModel,
}

impl PostProcessor {
    pub fn fit(x: &Matrix, labels: &[usize], m: usize, lda_ridge: f64, wccn_ridge: f64, order: Composition) -> Result<Self> {
        match order {
            Composition::LdaWccn => {
                let lda = fit_lda(x, labels, m, lda_ridge)?;
                let projected = transform_lda(&lda, x)?;
                let wccn = fit_wccn(&projected, labels, wccn_ridge)?;
                Ok(PostProcessor { order, lda, wccn })
            }
            Composition::WccnLda => {
                let wccn = fit_wccn(x, labels, wccn_ridge)?;
                let normalized = transform_wccn(&wccn, x)?;
                let lda = fit_lda(&normalized, labels, m, lda_ridge)?;
                Ok(PostProcessor { order, lda, wccn })
            }
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        match self.order {
            Composition::LdaWccn => transform_wccn(&self.wccn, &transform_lda(&self.lda, x)?),
            Composition::WccnLda => transform_lda(&self.lda, &transform_wccn(&self.wccn, x)?),
        }
    }

    pub fn dim(&self) -> usize {
        self.lda.dim()
    }
}
