//! Reference routines for integration tests. None of these call into the
//! decompositions they are used to check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type M = DMatrix<f64>;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> M {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = M::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

pub fn uniform_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for i in (1..n).rev() {
        y.swap(i, rng.random_range(0..=i));
    }
    y
}

/// Singular values (descending) by one-sided Jacobi rotations on the columns.
pub fn jacobi_singular_values(a: &M) -> Vec<f64> {
    let mut u = if a.nrows() >= a.ncols() { a.clone() } else { a.transpose() };
    let n = u.ncols();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..u.nrows() {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..u.nrows() {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| u.column(j).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Sample covariance by explicit summation, 1/(N−1), centered.
pub fn loop_cov(x: &M, y: &M) -> M {
    let n = x.nrows();
    let mx: Vec<f64> = (0..x.ncols()).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
    let my: Vec<f64> = (0..y.ncols()).map(|j| (0..n).map(|i| y[(i, j)]).sum::<f64>() / n as f64).collect();
    let mut c = M::zeros(x.ncols(), y.ncols());
    for a in 0..x.ncols() {
        for b in 0..y.ncols() {
            let mut s = 0.0;
            for i in 0..n {
                s += (x[(i, a)] - mx[a]) * (y[(i, b)] - my[b]);
            }
            c[(a, b)] = s / (n as f64 - 1.0);
        }
    }
    c
}

/// Canonical correlations as square roots of the eigenvalues of
/// `C_pp⁻¹ C_pa C_aa⁻¹ C_ap`, via LU inverses and a general (Schur)
/// eigenvalue solver. Returns the top `c`, descending.
pub fn cca_oracle(xp: &M, xa: &M, c: usize, ridge: f64) -> Vec<f64> {
    let cpp = loop_cov(xp, xp) + M::identity(xp.ncols(), xp.ncols()) * ridge;
    let caa = loop_cov(xa, xa) + M::identity(xa.ncols(), xa.ncols()) * ridge;
    let cpa = loop_cov(xp, xa);
    let prod = cpp.try_inverse().unwrap() * &cpa * caa.try_inverse().unwrap() * cpa.transpose();
    let mut ev: Vec<f64> = prod.complex_eigenvalues().iter().map(|z| z.re.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev.truncate(c);
    ev
}

/// Per-class covariance (1/n_c) averaged over classes, by explicit loops.
pub fn loop_within_class_cov(x: &M, labels: &[usize]) -> M {
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let d = x.ncols();
    let mut w = M::zeros(d, d);
    for &c in &classes {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&i| labels[i] == c).collect();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n).collect();
        for a in 0..d {
            for b in 0..d {
                let s: f64 = rows.iter().map(|&i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b])).sum();
                w[(a, b)] += s / n;
            }
        }
    }
    w / classes.len() as f64
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal(n: usize, seed: u64) -> M {
    gaussian(n, n, seed).qr().q()
}

/// Invertible matrix `Q₁·diag(s)·Q₂` with singular values in [1, max_cond].
pub fn conditioned(n: usize, max_cond: f64, seed: u64) -> M {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let s = M::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.random_range(1.0..max_cond)));
    orthogonal(n, seed) * s * orthogonal(n, seed.wrapping_add(1000))
}

pub fn max_abs(m: &M) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The five-dialect confusion counts used as the evaluation fixture.
pub const FIXTURE_LABELS: [&str; 5] = ["EGY", "GLF", "LAV", "MSA", "NOR"];
pub const FIXTURE_COUNTS: [[u64; 5]; 5] = [
    [229, 15, 52, 6, 12],
    [50, 127, 74, 9, 4],
    [70, 39, 205, 15, 16],
    [13, 18, 25, 219, 4],
    [81, 26, 78, 11, 158],
];

pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/dialect_confusion.json")
}

/// Small desk-scale pipeline config writing to `out`.
pub fn desk_config(out: &std::path::Path, seed: u64) -> String {
    format!(
        r#"[phonotactic]
max_terms = 300
k = 10

[acoustic]
components = 4
ubm_iters = 4
tv_iters = 3
ivector_dim = 6

[cca]
dim = 5

[classifier]
epochs = 8

[run]
seed = {seed}
out_dir = "{}"

[synth]
n_per_class = 16
"#,
        out.display()
    )
}
