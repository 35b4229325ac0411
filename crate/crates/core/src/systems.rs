//! The seven compared systems, built from the two VSMs.
//!
//! Every function here is shared by the in-memory comparison and by the
//! on-disk pipeline stages. Matrices are rounded to `f32` wherever a stage
//! boundary stores them as MVF1, so both routes compute identical numbers.

use rayon::prelude::*;

use crate::classifier::{argmax_rows, predict_proba, score_fuse, train_softmax, ScoreSpace, SoftmaxModel, TrainConfig};
use crate::config::PipelineConfig;
use crate::corpus::FrameMatrix;
use crate::discriminant::{Composition, PostProcessor};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, ConfusionMatrix, Metrics, SystemResult};
use crate::fusion::{fit_cca, transform, CcaModel};
use crate::numerics::{hcat, Matrix};

/// Feature spaces fed to a classifier: file stem and display name.
pub const FEATURE_SPACES: [(&str, &str); 6] = [
    ("xp", "X_P"),
    ("xa", "X_A"),
    ("zc", "Z_C"),
    ("a", "Z_C+LDA+WCCN (A)"),
    ("b", "X_A+LDA+WCCN (B)"),
    ("ab", "A+B"),
];

pub const SCORE_FUSION: &str = "X_P,X_A score fusion";

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub cca_dim: usize,
    pub cca_ridge: f64,
    pub lda_dim: usize,
    pub lda_ridge: f64,
    pub wccn_ridge: f64,
    pub order: Composition,
    pub train: TrainConfig,
    pub score_weights: Vec<f64>,
    pub score_space: ScoreSpace,
}

impl BackendConfig {
    pub fn from_pipeline(cfg: &PipelineConfig) -> Self {
        BackendConfig {
            cca_dim: cfg.cca.dim,
            cca_ridge: cfg.cca.ridge,
            lda_dim: cfg.lda_dim(),
            lda_ridge: cfg.discriminant.lda_ridge,
            wccn_ridge: cfg.discriminant.wccn_ridge,
            order: cfg.discriminant.order,
            train: cfg.classifier.train_config(cfg.seeds().classifier),
            score_weights: cfg.fusion.score_weights.clone(),
            score_space: cfg.fusion.score_space,
        }
    }
}

/// Round to the precision MVF1 stores.
pub fn quantize(m: &Matrix) -> Result<Matrix> {
    Ok(FrameMatrix::from_matrix(m)?.to_matrix())
}

/// A train/test pair of matrices in one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Matrix,
    pub test: Matrix,
}

impl Split {
    pub fn quantized(train: &Matrix, test: &Matrix) -> Result<Self> {
        Ok(Split {
            train: quantize(train)?,
            test: quantize(test)?,
        })
    }
}

pub fn cca_stage(xp: &Split, xa: &Split, cfg: &BackendConfig) -> Result<(CcaModel, Split)> {
    let model = fit_cca(&xp.train, &xa.train, cfg.cca_dim, cfg.cca_ridge)?;
    let zc = Split::quantized(&transform(&model, &xp.train, &xa.train)?, &transform(&model, &xp.test, &xa.test)?)?;
    Ok((model, zc))
}

/// Output of the LDA+WCCN stage.
#[derive(Debug, Clone)]
pub struct PostStage {
    pub zc: PostProcessor,
    pub xa: PostProcessor,
    pub a: Split,
    pub b: Split,
    pub ab: Split,
}

pub fn post_stage(zc: &Split, xa: &Split, labels: &[usize], cfg: &BackendConfig) -> Result<PostStage> {
    let fit = |s: &Split| -> Result<(PostProcessor, Split)> {
        let pp = PostProcessor::fit(&s.train, labels, cfg.lda_dim, cfg.lda_ridge, cfg.wccn_ridge, cfg.order)?;
        let out = Split::quantized(&pp.transform(&s.train)?, &pp.transform(&s.test)?)?;
        Ok((pp, out))
    };
    let (pp_zc, a) = fit(zc)?;
    let (pp_xa, b) = fit(xa)?;
    let ab = Split {
        train: hcat(&[&a.train, &b.train])?,
        test: hcat(&[&a.test, &b.test])?,
    };
    Ok(PostStage {
        zc: pp_zc,
        xa: pp_xa,
        a,
        b,
        ab,
    })
}

/// One classifier per entry of [`FEATURE_SPACES`], trained in parallel.
pub fn train_stage(train: &[&Matrix], labels: &[usize], label_set: &[String], cfg: &BackendConfig) -> Result<Vec<SoftmaxModel>> {
    train.par_iter().map(|x| train_softmax(x, labels, label_set, &cfg.train)).collect()
}

/// Test-set outcome of one system.
#[derive(Debug, Clone)]
pub struct SystemOutcome {
    pub name: String,
    pub dim: usize,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl SystemOutcome {
    pub fn result(&self) -> SystemResult {
        SystemResult {
            name: self.name.clone(),
            dim: self.dim,
            metrics: self.metrics.clone(),
        }
    }
}

fn outcome(name: &str, dim: usize, proba: &Matrix, truth: &[usize], label_set: &[String]) -> Result<SystemOutcome> {
    let predictions = argmax_rows(proba);
    let cm = confusion(truth, &predictions, label_set)?;
    Ok(SystemOutcome {
        name: name.to_string(),
        dim,
        predictions,
        metrics: metrics(&cm),
        confusion: cm,
    })
}

/// Scores every system on its test features; the last outcome is the score
/// fusion of the X_P and X_A classifiers.
pub fn evaluate_stage(
    models: &[SoftmaxModel],
    test: &[&Matrix],
    truth: &[usize],
    label_set: &[String],
    cfg: &BackendConfig,
) -> Result<Vec<SystemOutcome>> {
    if models.len() != FEATURE_SPACES.len() || test.len() != FEATURE_SPACES.len() {
        return Err(Error::dim("systems", FEATURE_SPACES.len(), models.len().min(test.len())));
    }
    let probas = models
        .iter()
        .zip(test)
        .map(|(m, x)| predict_proba(m, x))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(FEATURE_SPACES.len() + 1);
    for ((_, name), (p, x)) in FEATURE_SPACES.iter().zip(probas.iter().zip(test)) {
        out.push(outcome(name, x.ncols(), p, truth, label_set)?);
    }
    let fused = score_fuse(&probas[..2], &cfg.score_weights, cfg.score_space)?;
    out.push(outcome(SCORE_FUSION, label_set.len(), &fused, truth, label_set)?);
    Ok(out)
}

/// Full back-end comparison on in-memory VSMs.
pub fn compare_systems(
    xp: &Split,
    xa: &Split,
    train_labels: &[usize],
    test_labels: &[usize],
    label_set: &[String],
    cfg: &BackendConfig,
) -> Result<Vec<SystemOutcome>> {
    let xp = Split::quantized(&xp.train, &xp.test)?;
    let xa = Split::quantized(&xa.train, &xa.test)?;
    let (_, zc) = cca_stage(&xp, &xa, cfg)?;
    let post = post_stage(&zc, &xa, train_labels, cfg)?;
    let spaces = [&xp, &xa, &zc, &post.a, &post.b, &post.ab];
    let train: Vec<&Matrix> = spaces.iter().map(|s| &s.train).collect();
    let test: Vec<&Matrix> = spaces.iter().map(|s| &s.test).collect();
    let models = train_stage(&train, train_labels, label_set, cfg)?;
    evaluate_stage(&models, &test, test_labels, label_set, cfg)
}

/// Index of the outcome with the highest accuracy, first on ties.
pub fn best_system(outcomes: &[SystemOutcome]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if best.is_none_or(|b| o.metrics.accuracy > outcomes[b].metrics.accuracy) {
            best = Some(i);
        }
    }
    best
}
