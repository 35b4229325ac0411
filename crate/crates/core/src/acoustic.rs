//! Acoustic VSM: diagonal GMM-UBM, Baum-Welch statistics, total-variability
//! training and i-vector extraction under `M = u + T·v`.
//!
//! EM reductions are computed over fixed-size frame chunks in parallel and
//! summed in chunk order, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_frames, Dataset, FrameMatrix};
use crate::error::{Error, Result};
use crate::numerics::{spd_inverse, Matrix, Vector};

pub const DEFAULT_COMPONENTS: usize = 2048;
pub const DESK_COMPONENTS: usize = 32;
pub const DEFAULT_IVECTOR_DIM: usize = 400;
/// Variance floor relative to the global per-dimension feature variance.
pub const DEFAULT_VAR_FLOOR_REL: f64 = 1e-4;

const CHUNK: usize = 1024;
const COLLAPSE_OCCUPANCY: f64 = 1e-8;
const KMEANS_ITERS: usize = 10;
const MSTEP_RIDGE: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmUbm {
    pub weights: Vector,
    /// G×F
    pub means: Matrix,
    /// G×F diagonal covariances.
    pub variances: Matrix,
    pub var_floor: f64,
}

impl GmmUbm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Stacked means, component-major (length G·F).
    pub fn mean_supervector(&self) -> Vector {
        let (g, f) = self.means.shape();
        Vector::from_fn(g * f, |i, _| self.means[(i / f, i % f)])
    }

    pub fn variance_supervector(&self) -> Vector {
        let (g, f) = self.variances.shape();
        Vector::from_fn(g * f, |i, _| self.variances[(i / f, i % f)])
    }

    /// Per-component log(w_g) + log N(x | μ_g, Σ_g).
    fn log_joint(&self, consts: &[f64], x: &[f64], out: &mut [f64]) {
        for (g, o) in out.iter_mut().enumerate() {
            let mut q = 0.0;
            for (j, &xv) in x.iter().enumerate() {
                let d = xv - self.means[(g, j)];
                q += d * d / self.variances[(g, j)];
            }
            *o = consts[g] - 0.5 * q;
        }
    }

    fn log_consts(&self) -> Vec<f64> {
        (0..self.components())
            .map(|g| {
                let logdet: f64 = self.variances.row(g).iter().map(|v| v.ln()).sum();
                self.weights[g].ln() - 0.5 * (self.dim() as f64 * LN_2PI + logdet)
            })
            .collect()
    }

    /// Total log-likelihood of the frames under the mixture.
    pub fn log_likelihood(&self, frames: &[FrameMatrix]) -> Result<f64> {
        let data = FramePool::new(frames, self.dim())?;
        Ok(self.e_step(&data).log_likelihood)
    }

    fn e_step(&self, data: &FramePool) -> Accumulators {
        let consts = self.log_consts();
        let g = self.components();
        let f = self.dim();
        let parts: Vec<Accumulators> = data
            .values
            .par_chunks(CHUNK * f)
            .map(|chunk| {
                let mut acc = Accumulators::zeros(g, f);
                let mut lj = vec![0.0; g];
                for x in chunk.chunks_exact(f) {
                    self.log_joint(&consts, x, &mut lj);
                    let lse = log_sum_exp(&lj);
                    acc.log_likelihood += lse;
                    for c in 0..g {
                        let gamma = (lj[c] - lse).exp();
                        acc.n[c] += gamma;
                        for (j, &xv) in x.iter().enumerate() {
                            acc.s1[(c, j)] += gamma * xv;
                            acc.s2[(c, j)] += gamma * xv * xv;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = Accumulators::zeros(g, f);
        for p in parts {
            total.add(&p);
        }
        total
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Accumulators {
    log_likelihood: f64,
    n: Vector,
    s1: Matrix,
    s2: Matrix,
}

impl Accumulators {
    fn zeros(g: usize, f: usize) -> Self {
        Accumulators {
            log_likelihood: 0.0,
            n: Vector::zeros(g),
            s1: Matrix::zeros(g, f),
            s2: Matrix::zeros(g, f),
        }
    }

    fn add(&mut self, o: &Accumulators) {
        self.log_likelihood += o.log_likelihood;
        self.n += &o.n;
        self.s1 += &o.s1;
        self.s2 += &o.s2;
    }
}

/// All frames of a collection flattened row-major in `f64`.
struct FramePool {
    values: Vec<f64>,
    dim: usize,
}

impl FramePool {
    fn new(frames: &[FrameMatrix], dim: usize) -> Result<Self> {
        let mut values = Vec::new();
        for fm in frames {
            if fm.dim() != dim {
                return Err(Error::dim("frame feature dimension", dim, fm.dim()));
            }
            values.extend(fm.values().iter().map(|&v| v as f64));
        }
        Ok(FramePool { values, dim })
    }

    fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// `rel` times the mean per-dimension variance of all frames.
pub fn default_var_floor(frames: &[FrameMatrix], rel: f64) -> Result<f64> {
    let dim = frames.first().map(|f| f.dim()).ok_or_else(|| Error::InsufficientData("no frames".into()))?;
    let pool = FramePool::new(frames, dim)?;
    let n = pool.len() as f64;
    let mut mean = vec![0.0; dim];
    for i in 0..pool.len() {
        for (m, v) in mean.iter_mut().zip(pool.row(i)) {
            *m += v / n;
        }
    }
    let mut var = 0.0;
    for i in 0..pool.len() {
        for (m, v) in mean.iter().zip(pool.row(i)) {
            var += (v - m).powi(2) / n;
        }
    }
    Ok((rel * var / dim as f64).max(f64::MIN_POSITIVE))
}

/// Seeded Lloyd k-means; returns a mixture with cluster means, per-cluster
/// variances and occupancy weights.
fn kmeans_init(data: &FramePool, g: usize, var_floor: f64, rng: &mut ChaCha8Rng) -> GmmUbm {
    let f = data.dim;
    let n = data.len();
    let picks = rand::seq::index::sample(rng, n, g).into_vec();
    let mut centers = Matrix::from_fn(g, f, |c, j| data.row(picks[c])[j]);
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        for (i, a) in assign.iter_mut().enumerate() {
            let x = data.row(i);
            let mut best = (f64::INFINITY, 0);
            for c in 0..g {
                let d: f64 = x.iter().enumerate().map(|(j, v)| (v - centers[(c, j)]).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        }
        let mut sums = Matrix::zeros(g, f);
        let mut counts = vec![0usize; g];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (j, v) in data.row(i).iter().enumerate() {
                sums[(a, j)] += v;
            }
        }
        for c in 0..g {
            if counts[c] > 0 {
                for j in 0..f {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
    }
    let mut global_mean = vec![0.0; f];
    for i in 0..n {
        for (m, v) in global_mean.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut global_var = vec![0.0; f];
    for i in 0..n {
        for (j, v) in data.row(i).iter().enumerate() {
            global_var[j] += (v - global_mean[j]).powi(2) / n as f64;
        }
    }
    let mut counts = vec![0usize; g];
    let mut sq = Matrix::zeros(g, f);
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (j, v) in data.row(i).iter().enumerate() {
            sq[(a, j)] += (v - centers[(a, j)]).powi(2);
        }
    }
    let variances = Matrix::from_fn(g, f, |c, j| {
        let v = if counts[c] >= 2 { sq[(c, j)] / counts[c] as f64 } else { global_var[j] };
        v.max(var_floor)
    });
    let mut weights = Vector::from_fn(g, |c, _| counts[c].max(1) as f64);
    let total = weights.sum();
    weights /= total;
    GmmUbm {
        weights,
        means: centers,
        variances,
        var_floor,
    }
}

/// UBM plus the log-likelihood before each EM iteration and after the last.
#[derive(Debug, Clone)]
pub struct UbmTrace {
    pub ubm: GmmUbm,
    pub log_likelihoods: Vec<f64>,
    /// Components re-seeded because their occupancy collapsed.
    pub reseeded: usize,
}

pub fn train_ubm(frames: &[FrameMatrix], g: usize, iters: usize, seed: u64, var_floor: f64) -> Result<GmmUbm> {
    train_ubm_traced(frames, g, iters, seed, var_floor).map(|t| t.ubm)
}

pub fn train_ubm_traced(frames: &[FrameMatrix], g: usize, iters: usize, seed: u64, var_floor: f64) -> Result<UbmTrace> {
    if !(var_floor > 0.0) {
        return Err(Error::config("acoustic.var_floor", "variance floor must be positive"));
    }
    if g == 0 {
        return Err(Error::config("acoustic.components", "need at least one component"));
    }
    let dim = frames.first().map(|f| f.dim()).ok_or_else(|| Error::InsufficientData("no frames to train the UBM".into()))?;
    let data = FramePool::new(frames, dim)?;
    if data.len() < g {
        return Err(Error::InsufficientData(format!("{} frames for {g} components", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ubm = kmeans_init(&data, g, var_floor, &mut rng);
    let mut lls = Vec::with_capacity(iters + 1);
    let mut reseeded = 0;
    let total = data.len() as f64;
    for it in 0..iters {
        let acc = ubm.e_step(&data);
        lls.push(acc.log_likelihood);
        log::debug!("ubm iter {it}: log-likelihood {:.6}", acc.log_likelihood);
        let mut collapsed = Vec::new();
        for c in 0..g {
            if acc.n[c] < COLLAPSE_OCCUPANCY {
                collapsed.push(c);
                continue;
            }
            ubm.weights[c] = acc.n[c] / total;
            for j in 0..dim {
                let mu = acc.s1[(c, j)] / acc.n[c];
                ubm.means[(c, j)] = mu;
                ubm.variances[(c, j)] = (acc.s2[(c, j)] / acc.n[c] - mu * mu).max(var_floor);
            }
        }
        for c in collapsed {
            reseed_component(&mut ubm, c);
            reseeded += 1;
        }
        let w = ubm.weights.sum();
        ubm.weights /= w;
    }
    if iters > 0 {
        lls.push(ubm.e_step(&data).log_likelihood);
    }
    Ok(UbmTrace {
        ubm,
        log_likelihoods: lls,
        reseeded,
    })
}

/// Splits the highest-variance component to replace a collapsed one.
fn reseed_component(ubm: &mut GmmUbm, dead: usize) {
    let g = ubm.components();
    let donor = (0..g)
        .filter(|&c| c != dead)
        .max_by(|&a, &b| {
            let va: f64 = ubm.variances.row(a).sum();
            let vb: f64 = ubm.variances.row(b).sum();
            va.partial_cmp(&vb).unwrap().then(b.cmp(&a))
        })
        .unwrap_or(dead);
    log::warn!("ubm component {dead} collapsed; re-seeding from component {donor}");
    let axis = (0..ubm.dim())
        .max_by(|&a, &b| ubm.variances[(donor, a)].partial_cmp(&ubm.variances[(donor, b)]).unwrap())
        .unwrap_or(0);
    let shift = 0.5 * ubm.variances[(donor, axis)].sqrt();
    let donor_mean = ubm.means.row(donor).into_owned();
    ubm.means.set_row(dead, &donor_mean);
    ubm.means[(dead, axis)] += shift;
    ubm.means[(donor, axis)] -= shift;
    let donor_var = ubm.variances.row(donor).into_owned();
    ubm.variances.set_row(dead, &donor_var);
    let half = ubm.weights[donor] / 2.0;
    ubm.weights[donor] = half;
    ubm.weights[dead] = half;
}

/// Zeroth- and centered first-order statistics of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// Occupancies N_g, length G.
    pub n: Vector,
    /// G×F sums Σ_t γ_t(g)(x_t − μ_g).
    pub f: Matrix,
}

impl BaumWelchStats {
    pub fn zeros(g: usize, f: usize) -> Self {
        BaumWelchStats {
            n: Vector::zeros(g),
            f: Matrix::zeros(g, f),
        }
    }
}

pub fn accumulate_stats(x: &FrameMatrix, ubm: &GmmUbm) -> Result<BaumWelchStats> {
    if x.dim() != ubm.dim() {
        return Err(Error::dim("frame feature dimension", ubm.dim(), x.dim()));
    }
    let g = ubm.components();
    let consts = ubm.log_consts();
    let mut stats = BaumWelchStats::zeros(g, ubm.dim());
    let mut lj = vec![0.0; g];
    let mut row = vec![0.0; x.dim()];
    for t in 0..x.frames() {
        for (r, v) in row.iter_mut().zip(x.row(t)) {
            *r = *v as f64;
        }
        ubm.log_joint(&consts, &row, &mut lj);
        let lse = log_sum_exp(&lj);
        for c in 0..g {
            let gamma = (lj[c] - lse).exp();
            stats.n[c] += gamma;
            for (j, &xv) in row.iter().enumerate() {
                stats.f[(c, j)] += gamma * (xv - ubm.means[(c, j)]);
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvModel {
    /// (G·F)×R total-variability matrix.
    pub t: Matrix,
    /// UBM mean supervector, length G·F.
    pub u: Vector,
}

impl TvModel {
    pub fn rank(&self) -> usize {
        self.t.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVector {
    pub v: Vector,
}

/// Posterior of the latent factor given one utterance's statistics:
/// precision `L = I + Tᵀ Σ⁻¹ N T`, returns (L⁻¹, L⁻¹ Tᵀ Σ⁻¹ f).
fn posterior(stats: &BaumWelchStats, t: &Matrix, inv_var: &Vector, f_dim: usize) -> Result<(Matrix, Vector)> {
    let r = t.ncols();
    let gf = t.nrows();
    let mut weighted = t.clone();
    let mut rhs = Vector::zeros(r);
    for i in 0..gf {
        let g = i / f_dim;
        let w = stats.n[g] * inv_var[i];
        let fi = stats.f[(g, i % f_dim)] * inv_var[i];
        for k in 0..r {
            weighted[(i, k)] *= w;
            rhs[k] += t[(i, k)] * fi;
        }
    }
    let mut precision = t.tr_mul(&weighted);
    for k in 0..r {
        precision[(k, k)] += 1.0;
    }
    let cov = spd_inverse(&precision).ok_or(Error::Singular("i-vector posterior precision"))?;
    let mean = &cov * rhs;
    Ok((cov, mean))
}

fn check_stats_shape(s: &BaumWelchStats, ubm: &GmmUbm) -> Result<()> {
    if s.n.len() != ubm.components() || s.f.shape() != (ubm.components(), ubm.dim()) {
        return Err(Error::dim(
            "Baum-Welch statistics",
            format!("{}x{}", ubm.components(), ubm.dim()),
            format!("{}x{}", s.f.nrows(), s.f.ncols()),
        ));
    }
    Ok(())
}

/// Options for total-variability EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TvOptions {
    /// After each M-step, rescale T by the Cholesky factor of the average
    /// posterior second moment so the latent prior stays standard normal.
    pub min_divergence: bool,
}

pub fn train_tv(stats: &[BaumWelchStats], ubm: &GmmUbm, r: usize, iters: usize, seed: u64) -> Result<TvModel> {
    train_tv_from(stats, ubm, init_tv(ubm, r, seed)?, iters)
}

/// Random starting point `0.1·N(0, 1)·σ` for T.
pub fn init_tv(ubm: &GmmUbm, r: usize, seed: u64) -> Result<Matrix> {
    let gf = ubm.components() * ubm.dim();
    if r == 0 || r >= gf {
        return Err(Error::config("acoustic.ivector_dim", format!("R = {r} must satisfy 1 ≤ R < G·F = {gf}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = ubm.variance_supervector();
    let mut t_init = Matrix::zeros(gf, r);
    for i in 0..gf {
        for k in 0..r {
            let z: f64 = StandardNormal.sample(&mut rng);
            t_init[(i, k)] = 0.1 * z * var[i].sqrt();
        }
    }
    Ok(t_init)
}

/// EM for T from an explicit starting matrix.
pub fn train_tv_from(stats: &[BaumWelchStats], ubm: &GmmUbm, t_init: Matrix, iters: usize) -> Result<TvModel> {
    train_tv_with(stats, ubm, t_init, iters, TvOptions::default())
}

pub fn train_tv_with(stats: &[BaumWelchStats], ubm: &GmmUbm, t_init: Matrix, iters: usize, opts: TvOptions) -> Result<TvModel> {
    if stats.is_empty() {
        return Err(Error::InsufficientData("no utterance statistics for total-variability training".into()));
    }
    for s in stats {
        check_stats_shape(s, ubm)?;
    }
    let (g, f) = (ubm.components(), ubm.dim());
    if t_init.nrows() != g * f {
        return Err(Error::dim("total-variability rows", g * f, t_init.nrows()));
    }
    let r = t_init.ncols();
    let inv_var = ubm.variance_supervector().map(|v| 1.0 / v);
    let mut t = t_init;
    for it in 0..iters {
        let posts = stats
            .par_iter()
            .map(|s| posterior(s, &t, &inv_var, f))
            .collect::<Result<Vec<_>>>()?;
        let mut a: Vec<Matrix> = vec![Matrix::zeros(r, r); g];
        let mut c = Matrix::zeros(g * f, r);
        let mut moment = Matrix::zeros(r, r);
        for (s, (cov, mean)) in stats.iter().zip(&posts) {
            let second = cov + mean * mean.transpose();
            moment += &second;
            for (comp, acc) in a.iter_mut().enumerate() {
                if s.n[comp] != 0.0 {
                    *acc += &second * s.n[comp];
                }
            }
            for i in 0..g * f {
                let fi = s.f[(i / f, i % f)];
                for k in 0..r {
                    c[(i, k)] += fi * mean[k];
                }
            }
        }
        let blocks = a
            .par_iter()
            .enumerate()
            .map(|(comp, acc)| {
                let rhs = c.rows(comp * f, f).transpose();
                let solved = match acc.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => {
                        log::warn!("tv iter {it}: singular M-step system for component {comp}; adding ridge {MSTEP_RIDGE:e}");
                        let ridged = acc + Matrix::identity(r, r) * MSTEP_RIDGE;
                        ridged.cholesky().ok_or(Error::Singular("total-variability M-step"))?.solve(&rhs)
                    }
                };
                Ok(solved.transpose())
            })
            .collect::<Result<Vec<Matrix>>>()?;
        for (comp, block) in blocks.into_iter().enumerate() {
            t.rows_mut(comp * f, f).copy_from(&block);
        }
        if opts.min_divergence {
            moment /= stats.len() as f64;
            let l = moment.cholesky().ok_or(Error::Singular("minimum-divergence second moment"))?.l();
            t = &t * l;
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("total-variability matrix became non-finite at iteration {it}")));
        }
    }
    Ok(TvModel {
        t,
        u: ubm.mean_supervector(),
    })
}

/// Posterior mean v = (I + Tᵀ Σ⁻¹ N T)⁻¹ Tᵀ Σ⁻¹ f.
pub fn extract_ivector(s: &BaumWelchStats, tv: &TvModel, ubm: &GmmUbm) -> Result<IVector> {
    check_stats_shape(s, ubm)?;
    if tv.t.nrows() != ubm.components() * ubm.dim() {
        return Err(Error::dim("total-variability rows", ubm.components() * ubm.dim(), tv.t.nrows()));
    }
    let inv_var = ubm.variance_supervector().map(|v| 1.0 / v);
    let (_, v) = posterior(s, &tv.t, &inv_var, ubm.dim())?;
    Ok(IVector { v })
}

/// M = u + T·v
pub fn reconstruct_supervector(tv: &TvModel, v: &IVector) -> Result<Vector> {
    if v.v.len() != tv.rank() {
        return Err(Error::dim("i-vector length", tv.rank(), v.v.len()));
    }
    Ok(&tv.u + &tv.t * &v.v)
}

/// Loads one record's frames, resolving its reference against the dataset.
pub fn record_frames(dataset: &Dataset, index: usize) -> Result<FrameMatrix> {
    let rec = &dataset.records[index];
    let path = dataset
        .frames_path(rec)
        .ok_or_else(|| Error::InvalidInput(format!("record `{}` has no frames reference", rec.id)))?;
    load_frames(&path)
}

/// X_A with one i-vector row per record, in dataset order.
pub fn build_acoustic_vsm(dataset: &Dataset, ubm: &GmmUbm, tv: &TvModel) -> Result<Matrix> {
    let rows = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let frames = record_frames(dataset, i)?;
            let stats = accumulate_stats(&frames, ubm)?;
            extract_ivector(&stats, tv, ubm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_fn(rows.len(), tv.rank(), |i, j| rows[i].v[j]))
}

/// Scales every row to unit Euclidean norm (zero rows are left alone).
pub fn length_normalize(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Draws `n` frames from the mixture; used to build test fixtures.
pub fn sample_frames(ubm: &GmmUbm, n: usize, seed: u64) -> Result<FrameMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = ubm.dim();
    let mut values = Vec::with_capacity(n * f);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = ubm.components() - 1;
        for c in 0..ubm.components() {
            acc += ubm.weights[c];
            if u < acc {
                comp = c;
                break;
            }
        }
        for j in 0..f {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push((ubm.means[(comp, j)] + z * ubm.variances[(comp, j)].sqrt()) as f32);
        }
    }
    FrameMatrix::new(n, f, values)
}
