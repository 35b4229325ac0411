//! Softmax back-end with elastic-net regularization, and score-level fusion.
//!
//! Training minimizes
//!
//! ```text
//! mean cross-entropy + λ·(l1_ratio·‖W‖₁ + l2_ratio·½‖W‖₂²)
//! ```
//!
//! with a proximal stochastic gradient method: a gradient step on the
//! cross-entropy followed by the closed-form elastic-net proximal map
//! `W ← soft(W, η·λ·l1) / (1 + η·λ·l2)`. The bias is not regularized.
//! Step sizes follow `η_t = η₀ / (1 + η₀·λ·t)` with `t` counting updates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// D×C, acting on standardized features when `scaler` is set.
    pub w: Matrix,
    pub bias: Vector,
    pub label_set: Vec<String>,
    pub scaler: Option<Standardizer>,
}

/// Per-column affine map `(x − mean) / scale` fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vector,
    pub scale: Vector,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = Vector::from_iterator(
            x.ncols(),
            x.column_iter().enumerate().map(|(j, c)| {
                let sd = (c.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            }),
        );
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub l1_ratio: f64,
    pub l2_ratio: f64,
    pub reg_strength: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; 1 is plain SGD, 0 means full batch.
    pub batch: usize,
    pub seed: u64,
    /// Standardize features with training statistics before fitting.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l1_ratio: 0.5,
            l2_ratio: 0.5,
            reg_strength: 1e-4,
            learning_rate: 0.1,
            epochs: 20,
            batch: 1,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_ratio >= 0.0 && self.l2_ratio >= 0.0) {
            return Err(Error::config("classifier.l1_ratio", "regularization ratios must be non-negative"));
        }
        if !(self.reg_strength >= 0.0) {
            return Err(Error::config("classifier.reg_strength", "must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("classifier.learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("classifier.epochs", "must be at least 1"));
        }
        Ok(())
    }

    fn step_size(&self, t: usize) -> f64 {
        self.learning_rate / (1.0 + self.learning_rate * self.reg_strength * t as f64)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn probabilities(w: &Matrix, bias: &Vector, x: &Matrix) -> Matrix {
    let mut scores = x * w;
    for mut row in scores.row_iter_mut() {
        row += bias.transpose();
    }
    let c = w.ncols();
    let rows: Vec<Vec<f64>> = (0..scores.nrows())
        .into_par_iter()
        .map(|i| {
            let mut r: Vec<f64> = scores.row(i).iter().copied().collect();
            softmax_in_place(&mut r);
            r
        })
        .collect();
    Matrix::from_fn(x.nrows(), c, |i, j| rows[i][j])
}

/// Full objective and its (sub)gradient over all rows.
///
/// The L1 term contributes `λ·l1·sign(W)`, which is the gradient wherever
/// no coordinate of `W` is exactly zero.
pub fn objective_and_gradient(w: &Matrix, bias: &Vector, x: &Matrix, labels: &[usize], cfg: &TrainConfig) -> (f64, Matrix, Vector) {
    let n = x.nrows() as f64;
    let mut p = probabilities(w, bias, x);
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        ce -= p[(i, y)].max(f64::MIN_POSITIVE).ln();
        p[(i, y)] -= 1.0;
    }
    let lam = cfg.reg_strength;
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    let loss = ce / n + lam * (cfg.l1_ratio * l1 + cfg.l2_ratio * 0.5 * l2);
    let mut gw = x.tr_mul(&p) / n;
    gw += w * (lam * cfg.l2_ratio);
    gw += w.map(|v| v.signum() * if v == 0.0 { 0.0 } else { 1.0 }) * (lam * cfg.l1_ratio);
    let gb = Vector::from_fn(p.ncols(), |j, _| p.column(j).sum() / n);
    (loss, gw, gb)
}

pub fn objective(w: &Matrix, bias: &Vector, x: &Matrix, labels: &[usize], cfg: &TrainConfig) -> f64 {
    objective_and_gradient(w, bias, x, labels, cfg).0
}

/// Trained model plus the full objective after every epoch.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub model: SoftmaxModel,
    pub losses: Vec<f64>,
}

pub fn train_softmax(x: &Matrix, labels: &[usize], label_set: &[String], cfg: &TrainConfig) -> Result<SoftmaxModel> {
    train_softmax_traced(x, labels, label_set, cfg).map(|t| t.model)
}

pub fn train_softmax_traced(x: &Matrix, labels: &[usize], label_set: &[String], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let c = label_set.len();
    if c < 2 {
        return Err(Error::config("corpus.labels", "need at least 2 labels"));
    }
    if x.nrows() != labels.len() {
        return Err(Error::dim("labels per row", x.nrows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::UnknownLabel(format!("class index {bad}")));
    }
    if x.nrows() < c {
        return Err(Error::InsufficientData(format!("{} training rows for {c} classes", x.nrows())));
    }
    ensure_finite(x, "classifier input")?;

    let scaler = cfg.standardize.then(|| Standardizer::fit(x));
    let scaled;
    let x = match &scaler {
        Some(s) => {
            scaled = s.apply(x);
            &scaled
        }
        None => x,
    };
    let n = x.nrows();
    let d = x.ncols();
    let mut w = Matrix::zeros(d, c);
    // start from the log class prior; classes with no examples get a floor
    let mut counts = vec![0.0f64; c];
    for &l in labels {
        counts[l] += 1.0;
    }
    let logs: Vec<f64> = counts.iter().map(|&k| ((k + 1e-3) / n as f64).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / c as f64;
    let mut bias = Vector::from_fn(c, |j, _| logs[j] - mean_log);

    let batch = if cfg.batch == 0 { n } else { cfg.batch.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lam = cfg.reg_strength;
    let mut t = 0usize;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut probs = vec![0.0; c];
    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let mut gw = Matrix::zeros(d, c);
            let mut gb = Vector::zeros(c);
            for &i in chunk {
                for (j, p) in probs.iter_mut().enumerate() {
                    let mut s = bias[j];
                    for k in 0..d {
                        s += x[(i, k)] * w[(k, j)];
                    }
                    *p = s;
                }
                softmax_in_place(&mut probs);
                probs[labels[i]] -= 1.0;
                for j in 0..c {
                    gb[j] += probs[j];
                    for k in 0..d {
                        gw[(k, j)] += x[(i, k)] * probs[j];
                    }
                }
            }
            let eta = cfg.step_size(t);
            let scale = eta / chunk.len() as f64;
            w -= gw * scale;
            bias -= gb * scale;
            let thresh = eta * lam * cfg.l1_ratio;
            let shrink = 1.0 / (1.0 + eta * lam * cfg.l2_ratio);
            w.apply(|v| {
                let soft = v.signum() * (v.abs() - thresh).max(0.0);
                *v = soft * shrink;
            });
            t += 1;
        }
        let loss = objective(&w, &bias, x, labels, cfg);
        if !loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }
        log::debug!("softmax epoch {epoch}: objective {loss:.6}");
        losses.push(loss);
    }
    Ok(TrainTrace {
        model: SoftmaxModel {
            w,
            bias,
            label_set: label_set.to_vec(),
            scaler,
        },
        losses,
    })
}

pub fn predict_proba(m: &SoftmaxModel, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != m.w.nrows() {
        return Err(Error::dim("classifier input columns", m.w.nrows(), x.ncols()));
    }
    Ok(match &m.scaler {
        Some(s) => probabilities(&m.w, &m.bias, &s.apply(x)),
        None => probabilities(&m.w, &m.bias, x),
    })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(p: &Matrix) -> Vec<usize> {
    p.row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class indices into `m.label_set`.
pub fn predict(m: &SoftmaxModel, x: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&predict_proba(m, x)?))
}

pub fn predict_labels(m: &SoftmaxModel, x: &Matrix) -> Result<Vec<String>> {
    Ok(predict(m, x)?.into_iter().map(|i| m.label_set[i].clone()).collect())
}

/// Space in which posterior matrices are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSpace {
    /// Weighted arithmetic mean of probabilities.
    #[default]
    Probability,
    /// Weighted sum of log-probabilities, renormalized by softmax.
    LogOdds,
}

pub fn score_fuse(probas: &[Matrix], weights: &[f64], space: ScoreSpace) -> Result<Matrix> {
    let first = probas.first().ok_or_else(|| Error::InvalidInput("score fusion needs at least one matrix".into()))?;
    if weights.len() != probas.len() {
        return Err(Error::dim("fusion weights", probas.len(), weights.len()));
    }
    if let Some(bad) = probas.iter().find(|p| p.shape() != first.shape()) {
        return Err(Error::dim(
            "fused score matrices",
            format!("{}x{}", first.nrows(), first.ncols()),
            format!("{}x{}", bad.nrows(), bad.ncols()),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config("fusion.score_weights", "weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::config("fusion.score_weights", "weights must not all be zero"));
    }
    let mut out = Matrix::zeros(first.nrows(), first.ncols());
    for (p, &wt) in probas.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        let contrib = match space {
            ScoreSpace::Probability => p.clone(),
            ScoreSpace::LogOdds => p.map(|v| v.max(f64::MIN_POSITIVE).ln()),
        };
        out += contrib * (wt / total);
    }
    for mut row in out.row_iter_mut() {
        match space {
            ScoreSpace::Probability => {
                let s = row.sum();
                if s > 0.0 {
                    row /= s;
                }
            }
            ScoreSpace::LogOdds => {
                let mut r: Vec<f64> = row.iter().copied().collect();
                softmax_in_place(&mut r);
                for (dst, v) in row.iter_mut().zip(r) {
                    *dst = v;
                }
            }
        }
    }
    Ok(out)
}
