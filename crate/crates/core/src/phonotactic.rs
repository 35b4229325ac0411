//! Phone n-gram term-document matrix and its truncated-SVD subspace.
//!
//! The vocabulary keeps the `max_terms` most frequent n-grams of the
//! configured orders (ties broken lexicographically). Utterances become
//! sparse count rows, `X = U·S·Πᵀ` is learned by truncated SVD and the
//! phonotactic VSM is `X_P = X·Π`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{column_means, truncated_svd, Matrix, Vector};

pub const DEFAULT_ORDERS: [usize; 2] = [2, 3];
pub const DEFAULT_MAX_TERMS: usize = 8000;
pub const DEFAULT_RANK: usize = 1200;

const SVD_TOL: f64 = 1e-8;

pub type Ngram = Vec<String>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct NgramVocab {
    orders: Vec<usize>,
    terms: Vec<Ngram>,
    index: HashMap<Ngram, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    orders: Vec<usize>,
    terms: Vec<Ngram>,
}

impl From<VocabRepr> for NgramVocab {
    fn from(r: VocabRepr) -> Self {
        NgramVocab::from_terms(r.orders, r.terms)
    }
}

impl From<NgramVocab> for VocabRepr {
    fn from(v: NgramVocab) -> Self {
        VocabRepr {
            orders: v.orders,
            terms: v.terms,
        }
    }
}

impl PartialEq for NgramVocab {
    fn eq(&self, other: &Self) -> bool {
        self.orders == other.orders && self.terms == other.terms
    }
}

impl NgramVocab {
    fn from_terms(orders: Vec<usize>, terms: Vec<Ngram>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        NgramVocab { orders, terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn terms(&self) -> &[Ngram] {
        &self.terms
    }

    pub fn column(&self, ngram: &[String]) -> Option<usize> {
        self.index.get(ngram).copied()
    }
}

fn validate_orders(orders: &BTreeSet<usize>) -> Result<()> {
    if orders.is_empty() || orders.contains(&0) {
        return Err(Error::config("phonotactic.orders", "orders must be a non-empty set of positive integers"));
    }
    Ok(())
}

fn for_each_ngram<'a>(phones: &'a [String], orders: &[usize], mut f: impl FnMut(&'a [String])) {
    for &n in orders {
        if phones.len() >= n {
            for w in phones.windows(n) {
                f(w);
            }
        }
    }
}

/// Corpus frequencies of every n-gram of the given orders.
pub fn ngram_frequencies(dataset: &Dataset, orders: &BTreeSet<usize>) -> Result<HashMap<Ngram, u64>> {
    let orders: Vec<usize> = orders.iter().copied().collect();
    let mut freq: HashMap<Ngram, u64> = HashMap::new();
    for r in &dataset.records {
        let phones = r
            .phones
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("record `{}` has no phone sequence", r.id)))?;
        for_each_ngram(phones, &orders, |g| {
            if let Some(c) = freq.get_mut(g) {
                *c += 1;
            } else {
                freq.insert(g.to_vec(), 1);
            }
        });
    }
    Ok(freq)
}

pub fn build_vocab(dataset: &Dataset, orders: &BTreeSet<usize>, max_terms: usize) -> Result<NgramVocab> {
    validate_orders(orders)?;
    if max_terms == 0 {
        return Err(Error::config("phonotactic.max_terms", "must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::InsufficientData("cannot build a vocabulary from an empty corpus".into()));
    }
    let freq = ngram_frequencies(dataset, orders)?;
    if freq.is_empty() {
        return Err(Error::InsufficientData("corpus contains no n-grams of the requested orders".into()));
    }
    let mut ranked: Vec<(Ngram, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_terms);
    Ok(NgramVocab::from_terms(
        orders.iter().copied().collect(),
        ranked.into_iter().map(|(g, _)| g).collect(),
    ))
}

/// Sparse count vector as `(column, count)` pairs sorted by column.
pub type SparseCounts = Vec<(usize, u32)>;

/// Counts vocabulary n-grams over overlapping windows; unknown n-grams are ignored.
pub fn count_ngrams(phones: &[String], vocab: &NgramVocab) -> SparseCounts {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for_each_ngram(phones, &vocab.orders, |g| {
        if let Some(col) = vocab.column(g) {
            *counts.entry(col).or_insert(0) += 1;
        }
    });
    counts.into_iter().collect()
}

/// Sparse N×d count matrix, one row per utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDocMatrix {
    rows: Vec<SparseCounts>,
    cols: usize,
}

impl TermDocMatrix {
    pub fn from_rows(rows: Vec<SparseCounts>, cols: usize) -> Result<Self> {
        for r in &rows {
            if r.iter().any(|&(c, _)| c >= cols) {
                return Err(Error::dim("term-document column", format!("< {cols}"), "out-of-range column"));
            }
        }
        Ok(TermDocMatrix { rows, cols })
    }

    pub fn build(dataset: &Dataset, vocab: &NgramVocab) -> Result<Self> {
        let rows = dataset
            .records
            .par_iter()
            .map(|r| {
                r.phones
                    .as_deref()
                    .map(|p| count_ngrams(p, vocab))
                    .ok_or_else(|| Error::InvalidInput(format!("record `{}` has no phone sequence", r.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TermDocMatrix { rows, cols: vocab.len() })
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[(usize, u32)] {
        &self.rows[i]
    }

    pub fn to_dense(&self, weighting: TermWeighting) -> Matrix {
        let mut m = Matrix::zeros(self.rows.len(), self.cols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, n) in row {
                m[(i, c)] = weighting.apply(n);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermWeighting {
    /// f(p, s) as is.
    #[default]
    Raw,
    /// log(1 + f(p, s)).
    Log1p,
}

impl TermWeighting {
    fn apply(self, count: u32) -> f64 {
        match self {
            TermWeighting::Raw => count as f64,
            TermWeighting::Log1p => (count as f64).ln_1p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectorOptions {
    pub weighting: TermWeighting,
    /// Subtract the training column means before the SVD.
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonotacticProjector {
    /// d×k right singular vectors Π.
    pub pi: Matrix,
    pub singular_values: Vector,
    pub options: ProjectorOptions,
    /// Training column means when fitted with centering.
    pub mean: Option<Vector>,
}

impl PhonotacticProjector {
    pub fn k(&self) -> usize {
        self.pi.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.pi.nrows()
    }
}

pub fn fit_projector(x: &TermDocMatrix, k: usize, options: ProjectorOptions) -> Result<PhonotacticProjector> {
    let full = x.nrows().min(x.ncols());
    if k == 0 || k > full {
        return Err(Error::config("phonotactic.k", format!("k = {k} must lie in 1..={full} (min of utterances and vocabulary)")));
    }
    let mut dense = x.to_dense(options.weighting);
    let mean = if options.center {
        let mu = column_means(&dense);
        for (j, mut col) in dense.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mu[j]);
        }
        Some(mu)
    } else {
        None
    };
    let svd = truncated_svd(&dense, k, SVD_TOL)?;
    Ok(PhonotacticProjector {
        pi: svd.v,
        singular_values: svd.s,
        options,
        mean,
    })
}

/// X_P = X·Π (after the projector's weighting and optional centering).
pub fn project(x: &TermDocMatrix, p: &PhonotacticProjector) -> Result<Matrix> {
    if x.ncols() != p.vocab_size() {
        return Err(Error::dim("phonotactic projection columns", p.vocab_size(), x.ncols()));
    }
    let k = p.k();
    let offset = p.mean.as_ref().map(|mu| p.pi.tr_mul(mu));
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; k];
            for &(c, n) in x.row(i) {
                let w = p.options.weighting.apply(n);
                for (j, o) in out.iter_mut().enumerate() {
                    *o += w * p.pi[(c, j)];
                }
            }
            if let Some(off) = &offset {
                for (o, b) in out.iter_mut().zip(off.iter()) {
                    *o -= b;
                }
            }
            out
        })
        .collect();
    Ok(Matrix::from_fn(x.nrows(), k, |i, j| rows[i][j]))
}

/// Projects dense count rows (N×d).
pub fn project_dense(counts: &Matrix, p: &PhonotacticProjector) -> Result<Matrix> {
    if counts.ncols() != p.vocab_size() {
        return Err(Error::dim("phonotactic projection columns", p.vocab_size(), counts.ncols()));
    }
    let mut w = counts.map(|c| match p.options.weighting {
        TermWeighting::Raw => c,
        TermWeighting::Log1p => c.ln_1p(),
    });
    if let Some(mu) = &p.mean {
        for (j, mut col) in w.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mu[j]);
        }
    }
    Ok(w * &p.pi)
}
