//! Stage-by-stage driver. Each stage reads its inputs from the output
//! directory (or from explicit `--stage-input` paths), writes model
//! containers and MVF1 matrices back, and can be rerun in isolation.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind as IoKind;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::acoustic::{
    accumulate_stats, build_acoustic_vsm, default_var_floor, init_tv, length_normalize, record_frames, train_tv_with, train_ubm, GmmUbm, TvModel, TvOptions,
};
use crate::classifier::SoftmaxModel;
use crate::config::{hex, FusionMode, PipelineConfig};
use crate::container::{self, Metadata, StagePayload};
use crate::corpus::{load_frames, load_manifest, render_views, save_frames, save_manifest, stratified_split, synth_two_view_with, Dataset, FrameMatrix};
use crate::error::{Error, Result};
use crate::eval::{metrics, render_confusion, report, ConfusionMatrix, SystemResult};
use crate::numerics::Matrix;
use crate::phonotactic::{build_vocab, fit_projector, project, NgramVocab, TermDocMatrix};
use crate::systems::{self, best_system, BackendConfig, Split, SystemOutcome, FEATURE_SPACES, SCORE_FUSION};

/// Every subcommand, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SynthData,
    BuildVocab,
    FeaturizePhono,
    TrainUbm,
    TrainTv,
    ExtractIvectors,
    FitCca,
    FitLdaWccn,
    TrainClf,
    Evaluate,
    RunPipeline,
}

impl Command {
    pub const STAGES: [Command; 9] = [
        Command::BuildVocab,
        Command::FeaturizePhono,
        Command::TrainUbm,
        Command::TrainTv,
        Command::ExtractIvectors,
        Command::FitCca,
        Command::FitLdaWccn,
        Command::TrainClf,
        Command::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::BuildVocab => "build-vocab",
            Command::FeaturizePhono => "featurize-phono",
            Command::TrainUbm => "train-ubm",
            Command::TrainTv => "train-tv",
            Command::ExtractIvectors => "extract-ivectors",
            Command::FitCca => "fit-cca",
            Command::FitLdaWccn => "fit-lda-wccn",
            Command::TrainClf => "train-clf",
            Command::Evaluate => "evaluate",
            Command::RunPipeline => "run-pipeline",
        }
    }
}

/// Subcommand that writes a given artifact.
fn producer(artifact: &str) -> &'static str {
    let stem = artifact.split('.').next().unwrap_or(artifact);
    let space = stem.trim_end_matches("_train").trim_end_matches("_test");
    match space {
        "manifest" | "x_p_raw" | "x_a_raw" => "synth-data",
        "vocab" => "build-vocab",
        "projector" | "xp" => "featurize-phono",
        "ubm" => "train-ubm",
        "tv" => "train-tv",
        "xa" => "extract-ivectors",
        "cca" | "zc" => "fit-cca",
        "lda_zc" | "wccn_zc" | "lda_xa" | "wccn_xa" | "a" | "b" | "ab" => "fit-lda-wccn",
        s if s.starts_with("softmax_") => "train-clf",
        _ => "run-pipeline",
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Explicit artifact paths, matched to required inputs by file name.
    pub stage_inputs: Vec<PathBuf>,
    /// Ignore a stale lock and config-hash mismatches.
    pub force: bool,
}

/// Exclusive lock on an output directory, released on drop.
#[derive(Debug)]
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path, force: bool) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock(path)),
            Err(e) if e.kind() == IoKind::AlreadyExists => {
                if force {
                    log::warn!("overriding existing lock {}", path.display());
                    Ok(DirLock(path))
                } else {
                    Err(Error::Locked(dir.to_path_buf()))
                }
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Train/test partition of the corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
}

pub struct Workspace {
    cfg: PipelineConfig,
    hash: [u8; 32],
    out: PathBuf,
    inputs: BTreeMap<String, PathBuf>,
    force: bool,
    _lock: DirLock,
}

impl Workspace {
    pub fn open(cfg: PipelineConfig, opts: &RunOptions) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let lock = DirLock::acquire(&out, opts.force)?;
        let mut inputs = BTreeMap::new();
        for p in &opts.stage_inputs {
            let name = p
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::config("--stage-input", format!("`{}` has no file name", p.display())))?;
            inputs.insert(name.to_string(), p.clone());
        }
        Ok(Workspace {
            hash: cfg.hash(),
            cfg,
            out,
            inputs,
            force: opts.force,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn meta(&self) -> Metadata {
        Metadata {
            config_hash: self.hash,
            seed: self.cfg.run.seed,
        }
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        if let Some(p) = self.inputs.get(name) {
            return Ok(p.clone());
        }
        let p = self.out.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingStageInput {
                artifact: name.to_string(),
                producer: producer(name),
            })
        }
    }

    fn save_model<T: StagePayload>(&self, name: &str, model: &T) -> Result<()> {
        container::save(&self.out.join(name), &self.meta(), model)
    }

    fn load_model<T: StagePayload>(&self, name: &str, check_hash: bool) -> Result<T> {
        let path = self.input(name)?;
        let (meta, model) = container::load(&path)?;
        if check_hash && meta.config_hash != self.hash {
            if self.force {
                log::warn!("{} has config hash {}, current is {}", path.display(), meta.hash_hex(), hex(&self.hash));
            } else {
                return Err(Error::HashMismatch {
                    path,
                    expected: hex(&self.hash),
                    found: meta.hash_hex(),
                });
            }
        }
        Ok(model)
    }

    fn save_matrix(&self, name: &str, m: &Matrix) -> Result<()> {
        save_frames(&self.out.join(name), &FrameMatrix::from_matrix(m)?)
    }

    fn load_matrix(&self, name: &str) -> Result<Matrix> {
        Ok(load_frames(&self.input(name)?)?.to_matrix())
    }

    fn save_split(&self, stem: &str, s: &Split) -> Result<()> {
        self.save_matrix(&format!("{stem}_train.mvf"), &s.train)?;
        self.save_matrix(&format!("{stem}_test.mvf"), &s.test)
    }

    fn load_split(&self, stem: &str) -> Result<Split> {
        Ok(Split {
            train: self.load_matrix(&format!("{stem}_train.mvf"))?,
            test: self.load_matrix(&format!("{stem}_test.mvf"))?,
        })
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
            what: "results",
            msg: e.to_string(),
        })?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let labels = &self.cfg.corpus.labels;
        let manifest = match &self.cfg.corpus.manifest {
            Some(_) => self.cfg.manifest_path(),
            None => self.input("manifest.jsonl")?,
        };
        let full = load_manifest(&manifest, labels)?;
        match &self.cfg.corpus.test_manifest {
            Some(t) => Ok(Corpus {
                train: full,
                test: load_manifest(&self.cfg.resolve(t), labels)?,
            }),
            None => {
                let (train, test) = stratified_split(&full, self.cfg.corpus.test_fraction, self.cfg.seeds().split)?;
                Ok(Corpus { train, test })
            }
        }
    }

    fn backend(&self) -> BackendConfig {
        BackendConfig::from_pipeline(&self.cfg)
    }

    pub fn run(&self, cmd: Command) -> Result<()> {
        log::info!("running {}", cmd.name());
        match cmd {
            Command::SynthData => self.synth_data(),
            Command::BuildVocab => self.build_vocab(),
            Command::FeaturizePhono => self.featurize_phono(),
            Command::TrainUbm => self.train_ubm(),
            Command::TrainTv => self.train_tv(),
            Command::ExtractIvectors => self.extract_ivectors(),
            Command::FitCca => self.fit_cca(),
            Command::FitLdaWccn => self.fit_lda_wccn(),
            Command::TrainClf => self.train_clf(),
            Command::Evaluate => self.evaluate(),
            Command::RunPipeline => Command::STAGES.iter().try_for_each(|&c| self.run(c)),
        }
    }

    fn synth_data(&self) -> Result<()> {
        let s = &self.cfg.synth;
        let seed = self.cfg.seeds().synth;
        let mut data = synth_two_view_with(s.n_per_class, s.classes, s.shared_dim, s.noise_p, s.noise_a, seed, &s.shape)?;
        if data.dataset.label_set != self.cfg.corpus.labels {
            return Err(Error::config(
                "corpus.labels",
                format!("synthetic data with {} classes uses labels {:?}", s.classes, data.dataset.label_set),
            ));
        }
        let (phones, frames) = render_views(&data, &s.render, seed.wrapping_add(1))?;
        let frame_dir = self.out.join("frames");
        fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        for ((rec, ph), fr) in data.dataset.records.iter_mut().zip(phones).zip(&frames) {
            let rel = PathBuf::from("frames").join(format!("{}.mvf", rec.id));
            save_frames(&self.out.join(&rel), fr)?;
            rec.phones = Some(ph);
            rec.frames_ref = Some(rel);
        }
        save_manifest(&self.out.join("manifest.jsonl"), &data.dataset)?;
        self.save_matrix("x_p_raw.mvf", &data.x_p)?;
        self.save_matrix("x_a_raw.mvf", &data.x_a)
    }

    fn build_vocab(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let p = &self.cfg.phonotactic;
        let vocab = build_vocab(&corpus.train, &p.order_set(), p.max_terms)?;
        log::info!("vocabulary has {} terms", vocab.len());
        self.save_model("vocab.mvdm", &vocab)
    }

    fn featurize_phono(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let vocab: NgramVocab = self.load_model("vocab.mvdm", false)?;
        let train = TermDocMatrix::build(&corpus.train, &vocab)?;
        let test = TermDocMatrix::build(&corpus.test, &vocab)?;
        let p = &self.cfg.phonotactic;
        let proj = fit_projector(&train, p.k, p.projector_options())?;
        self.save_model("projector.mvdm", &proj)?;
        self.save_split("xp", &Split::quantized(&project(&train, &proj)?, &project(&test, &proj)?)?)
    }

    fn train_frames(&self, ds: &Dataset) -> Result<Vec<FrameMatrix>> {
        (0..ds.len()).into_par_iter().map(|i| record_frames(ds, i)).collect()
    }

    fn train_ubm(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let frames = self.train_frames(&corpus.train)?;
        let a = &self.cfg.acoustic;
        let floor = default_var_floor(&frames, a.var_floor_rel)?;
        let ubm = train_ubm(&frames, a.components, a.ubm_iters, self.cfg.seeds().ubm, floor)?;
        self.save_model("ubm.mvdm", &ubm)
    }

    fn train_tv(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let ubm: GmmUbm = self.load_model("ubm.mvdm", false)?;
        let frames = self.train_frames(&corpus.train)?;
        let stats = frames.par_iter().map(|f| accumulate_stats(f, &ubm)).collect::<Result<Vec<_>>>()?;
        let a = &self.cfg.acoustic;
        let init = init_tv(&ubm, a.ivector_dim, self.cfg.seeds().tv)?;
        let opts = TvOptions {
            min_divergence: a.min_divergence,
        };
        let tv = train_tv_with(&stats, &ubm, init, a.tv_iters, opts)?;
        self.save_model("tv.mvdm", &tv)
    }

    fn extract_ivectors(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let ubm: GmmUbm = self.load_model("ubm.mvdm", false)?;
        let tv: TvModel = self.load_model("tv.mvdm", false)?;
        let vsm = |ds: &Dataset| -> Result<Matrix> {
            let x = build_acoustic_vsm(ds, &ubm, &tv)?;
            Ok(if self.cfg.acoustic.length_norm { length_normalize(&x) } else { x })
        };
        self.save_split("xa", &Split::quantized(&vsm(&corpus.train)?, &vsm(&corpus.test)?)?)
    }

    fn fit_cca(&self) -> Result<()> {
        let xp = self.load_split("xp")?;
        let xa = self.load_split("xa")?;
        let (model, zc) = systems::cca_stage(&xp, &xa, &self.backend())?;
        log::info!("leading canonical correlation {:.4}", model.correlations[0]);
        self.save_model("cca.mvdm", &model)?;
        self.save_split("zc", &zc)
    }

    fn fit_lda_wccn(&self) -> Result<()> {
        let labels = self.corpus()?.train.label_indices()?;
        let zc = self.load_split("zc")?;
        let xa = self.load_split("xa")?;
        let post = systems::post_stage(&zc, &xa, &labels, &self.backend())?;
        self.save_model("lda_zc.mvdm", &post.zc.lda)?;
        self.save_model("wccn_zc.mvdm", &post.zc.wccn)?;
        self.save_model("lda_xa.mvdm", &post.xa.lda)?;
        self.save_model("wccn_xa.mvdm", &post.xa.wccn)?;
        self.save_split("a", &post.a)?;
        self.save_split("b", &post.b)?;
        self.save_split("ab", &post.ab)
    }

    fn train_clf(&self) -> Result<()> {
        let corpus = self.corpus()?;
        let labels = corpus.train.label_indices()?;
        let train = FEATURE_SPACES
            .iter()
            .map(|(stem, _)| self.load_matrix(&format!("{stem}_train.mvf")))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Matrix> = train.iter().collect();
        let models = systems::train_stage(&refs, &labels, &corpus.train.label_set, &self.backend())?;
        for ((stem, _), m) in FEATURE_SPACES.iter().zip(&models) {
            self.save_model(&format!("softmax_{stem}.mvdm"), m)?;
        }
        Ok(())
    }

    fn fixture_input(&self) -> Option<Result<ConfusionMatrix>> {
        self.inputs.values().find(|p| p.extension().is_some_and(|e| e == "json")).map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<ConfusionMatrix>(&text)
                .map_err(|e| Error::Format {
                    what: "confusion fixture",
                    msg: e.to_string(),
                })
                .and_then(|cm| ConfusionMatrix::new(cm.labels, cm.counts))
        })
    }

    fn evaluate(&self) -> Result<()> {
        if let Some(cm) = self.fixture_input() {
            let cm = cm?;
            let outcome = SystemOutcome {
                name: "fixture".into(),
                dim: cm.labels.len(),
                predictions: Vec::new(),
                metrics: metrics(&cm),
                confusion: cm,
            };
            return self.write_results(&[outcome], 0, None);
        }
        let corpus = self.corpus()?;
        let truth = corpus.test.label_indices()?;
        let models = FEATURE_SPACES
            .iter()
            .map(|(stem, _)| self.load_model::<SoftmaxModel>(&format!("softmax_{stem}.mvdm"), true))
            .collect::<Result<Vec<_>>>()?;
        let test = FEATURE_SPACES
            .iter()
            .map(|(stem, _)| self.load_matrix(&format!("{stem}_test.mvf")))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Matrix> = test.iter().collect();
        let outcomes = systems::evaluate_stage(&models, &refs, &truth, &corpus.test.label_set, &self.backend())?;
        let selected = match self.cfg.fusion.mode {
            FusionMode::Feature => FEATURE_SPACES[3].1,
            FusionMode::Concat => FEATURE_SPACES[5].1,
            FusionMode::Score => SCORE_FUSION,
        };
        let sel = outcomes.iter().position(|o| o.name == selected).expect("selected system is always evaluated");
        let best = best_system(&outcomes).expect("at least one system");
        self.write_results(&outcomes, best, Some((sel, &corpus.test)))
    }

    fn write_results(&self, outcomes: &[SystemOutcome], best: usize, predictions: Option<(usize, &Dataset)>) -> Result<()> {
        let rows: Vec<SystemResult> = outcomes.iter().map(SystemOutcome::result).collect();
        let mut text = report(&rows)?;
        text.push_str(&format!("\nconfusion matrix: {}\n", outcomes[best].name));
        text.push_str(&render_confusion(&outcomes[best].confusion));
        self.write_text("report.txt", &text)?;
        print!("{text}");

        let results = ResultsFile {
            config_hash: hex(&self.hash),
            seed: self.cfg.run.seed,
            best: outcomes[best].name.clone(),
            systems: outcomes.iter().map(SystemEntry::from).collect(),
        };
        self.write_json("results.json", &results)?;

        if let Some((sel, test)) = predictions {
            let o = &outcomes[sel];
            let labels = &test.label_set;
            let file = PredictionsFile {
                system: o.name.clone(),
                predictions: test
                    .records
                    .iter()
                    .zip(&o.predictions)
                    .map(|(r, &p)| Prediction {
                        id: r.id.clone(),
                        truth: r.label.as_ref().map(|l| l.as_str().to_string()),
                        predicted: labels[p].clone(),
                    })
                    .collect(),
            };
            self.write_json("predictions.json", &file)?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ClassEntry {
    label: String,
    precision: f64,
    recall: f64,
    precision_defined: bool,
}

#[derive(Debug, Serialize)]
struct SystemEntry {
    system: String,
    dim: usize,
    acc: f64,
    prc: f64,
    rcl: f64,
    per_class: Vec<ClassEntry>,
    confusion: ConfusionMatrix,
}

impl From<&SystemOutcome> for SystemEntry {
    fn from(o: &SystemOutcome) -> Self {
        SystemEntry {
            system: o.name.clone(),
            dim: o.dim,
            acc: o.metrics.accuracy,
            prc: o.metrics.macro_precision,
            rcl: o.metrics.macro_recall,
            per_class: o
                .confusion
                .labels
                .iter()
                .zip(&o.metrics.per_class)
                .map(|(l, m)| ClassEntry {
                    label: l.clone(),
                    precision: m.precision,
                    recall: m.recall,
                    precision_defined: m.precision_defined,
                })
                .collect(),
            confusion: o.confusion.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ResultsFile {
    config_hash: String,
    seed: u64,
    best: String,
    systems: Vec<SystemEntry>,
}

#[derive(Debug, Serialize)]
struct Prediction {
    id: String,
    truth: Option<String>,
    predicted: String,
}

#[derive(Debug, Serialize)]
struct PredictionsFile {
    system: String,
    predictions: Vec<Prediction>,
}
