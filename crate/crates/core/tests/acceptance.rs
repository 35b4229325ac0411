//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use vsmfuse::acoustic::{
    accumulate_stats, extract_ivector, train_tv, train_ubm, train_ubm_traced, BaumWelchStats, GmmUbm, TvModel,
};
use vsmfuse::classifier::{objective, objective_and_gradient, train_softmax, ScoreSpace, SoftmaxModel, TrainConfig};
use vsmfuse::container::{self, Metadata, StagePayload};
use vsmfuse::corpus::{
    load_frames, Dataset, save_frames, stratified_split_indices, synth_two_view, FrameMatrix, UtteranceRecord, CALIBRATED_NOISE_A,
    CALIBRATED_NOISE_P,
};
use vsmfuse::discriminant::{fit_lda, fit_wccn, transform_wccn, Composition, PostProcessor};
use vsmfuse::eval::{metrics, ConfusionMatrix};
use vsmfuse::fusion::fit_cca;
use vsmfuse::numerics::{select_rows, truncated_svd, Matrix, Vector};
use vsmfuse::phonotactic::{build_vocab, fit_projector, NgramVocab, ProjectorOptions, TermDocMatrix};
use vsmfuse::systems::{compare_systems, BackendConfig, Split};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// 1. CCA correlations equal the generalized-eigenproblem oracle.
fn cca_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let xp = gaussian(50, 8, 100 + inst);
        let xa = xp.columns(0, 6) * gaussian(6, 6, 200 + inst) * 0.5 + gaussian(50, 6, 300 + inst);
        let m = fit_cca(&xp, &xa, 4, 1e-10).map_err(|e| e.to_string())?;
        let oracle = cca_oracle(&xp, &xa, 4, 1e-10);
        for (a, b) in m.correlations.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let took = start.elapsed();
    ensure(worst < 1e-8, || format!("max deviation {worst:e}"))?;
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("max deviation {worst:.1e} over 20 instances in {took:.2?}"))
}

/// 2. Correlations are unchanged by invertible affine maps of either view.
fn cca_affine_invariance() -> Check {
    let mut worst = 0.0f64;
    for trial in 0..10u64 {
        let xp = gaussian(80, 5, 400 + trial);
        let xa = xp.columns(0, 4) * gaussian(4, 4, 500 + trial) + gaussian(80, 4, 600 + trial);
        let base = fit_cca(&xp, &xa, 4, 1e-10).map_err(|e| e.to_string())?.correlations;
        let a = conditioned(5, 10.0, 700 + trial);
        let cond = {
            let s = a.clone().svd(false, false).singular_values;
            s.max() / s.min()
        };
        ensure(cond < 100.0, || format!("trial {trial}: condition number {cond}"))?;
        let shift = gaussian(1, 5, 800 + trial);
        let mut xp2 = &xp * &a;
        for mut row in xp2.row_iter_mut() {
            row += &shift;
        }
        let b = conditioned(4, 10.0, 900 + trial);
        let xa2 = &xa * &b;
        for (other_p, other_a) in [(&xp2, &xa), (&xp, &xa2)] {
            let moved = fit_cca(other_p, other_a, 4, 1e-10).map_err(|e| e.to_string())?.correlations;
            worst = worst.max((&moved - &base).amax());
        }
    }
    ensure(worst < 1e-6, || format!("max change {worst:e}"))?;
    Ok(format!("max change {worst:.1e} over 10 trials"))
}

/// 3. Rank-k truncation error equals the tail energy of the full spectrum.
fn eckart_young() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let m = gaussian(20, 15, 1000 + seed);
        let full = jacobi_singular_values(&m);
        for k in [1usize, 5, 10] {
            let svd = truncated_svd(&m, k, 1e-8).map_err(|e| e.to_string())?;
            let err = (&m - svd.reconstruct()).norm();
            let tail = full[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            worst = worst.max((err - tail).abs());
        }
    }
    ensure(worst < 1e-8, || format!("max gap {worst:e}"))?;
    Ok(format!("max gap {worst:.1e}"))
}

/// 4. G=F=R=1, n=4, f=2, σ²=1, T=1 gives v = 0.4.
fn ivector_scalar() -> Check {
    let ubm = GmmUbm {
        weights: Vector::from_element(1, 1.0),
        means: Matrix::zeros(1, 1),
        variances: Matrix::from_element(1, 1, 1.0),
        var_floor: 1e-6,
    };
    let tv = TvModel {
        t: Matrix::from_element(1, 1, 1.0),
        u: Vector::zeros(1),
    };
    let stats = BaumWelchStats {
        n: Vector::from_element(1, 4.0),
        f: Matrix::from_element(1, 1, 2.0),
    };
    let v = extract_ivector(&stats, &tv, &ubm).map_err(|e| e.to_string())?.v[0];
    ensure((v - 0.4).abs() < 1e-10, || format!("v = {v}"))?;
    Ok(format!("v = {v}"))
}

/// 5. UBM EM is monotone and recovers two cluster means.
fn ubm_monotonicity() -> Check {
    let sigma = 0.5;
    let truth = [[-3.0, 1.0], [2.0, -2.0]];
    let mut x = gaussian(2000, 2, 77) * sigma;
    for i in 0..2000 {
        for j in 0..2 {
            x[(i, j)] += truth[i % 2][j];
        }
    }
    let frames = vec![FrameMatrix::from_matrix(&x).map_err(|e| e.to_string())?];
    let trace = train_ubm_traced(&frames, 2, 10, 3, 1e-4).map_err(|e| e.to_string())?;
    let lls = &trace.log_likelihoods;
    let worst_drop = lls.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    ensure(worst_drop <= 1e-6, || format!("log-likelihood dropped by {worst_drop:e}"))?;
    let mut worst = 0.0f64;
    for t in &truth {
        let best = (0..2)
            .map(|g| ((trace.ubm.means[(g, 0)] - t[0]).powi(2) + (trace.ubm.means[(g, 1)] - t[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    ensure(worst < 0.1 * sigma, || format!("mean error {worst} vs 0.1σ = {}", 0.1 * sigma))?;
    Ok(format!("{} steps, max drop {worst_drop:.1e}, mean error {worst:.3}", lls.len() - 1))
}

/// 6. WCCN whitens the average within-class covariance exactly.
fn wccn_whitening() -> Check {
    let labels = uniform_labels(90, 3, 5);
    let mut x = gaussian(90, 4, 6) * gaussian(4, 4, 7);
    for (i, &y) in labels.iter().enumerate() {
        x[(i, 0)] += 3.0 * y as f64;
    }
    let m = fit_wccn(&x, &labels, 0.0).map_err(|e| e.to_string())?;
    let w = loop_within_class_cov(&transform_wccn(&m, &x).map_err(|e| e.to_string())?, &labels);
    let err = max_abs(&(w - M::identity(4, 4)));
    ensure(err < 1e-8, || format!("max deviation from I {err:e}"))?;
    Ok(format!("max deviation from I {err:.1e}"))
}

/// 7. Five classes yield at most four discriminant directions.
fn lda_dimensionality() -> Check {
    let labels = uniform_labels(100, 5, 8);
    let mut x = gaussian(100, 10, 9);
    for (i, &y) in labels.iter().enumerate() {
        x[(i, y)] += 2.0;
    }
    let m = fit_lda(&x, &labels, 4, 1e-6).map_err(|e| e.to_string())?;
    ensure(m.dim() == 4, || format!("dim {}", m.dim()))?;
    ensure(fit_lda(&x, &labels, 5, 1e-6).is_err(), || "m = 5 accepted".into())?;
    let pp = PostProcessor::fit(&x, &labels, 4, 1e-6, 1e-6, Composition::LdaWccn).map_err(|e| e.to_string())?;
    ensure(pp.dim() == 4, || format!("post-processor dim {}", pp.dim()))?;
    Ok("d = 4, m = 5 rejected".into())
}

/// 8. Analytic softmax gradient agrees with central differences.
fn softmax_gradient() -> Check {
    let x = gaussian(40, 10, 11);
    let labels = uniform_labels(40, 5, 12);
    let w = gaussian(10, 5, 13) * 0.3;
    let b = Vector::from_iterator(5, gaussian(5, 1, 14).iter().copied());
    let cfg = TrainConfig {
        reg_strength: 1e-2,
        ..TrainConfig::default()
    };
    let (_, gw, gb) = objective_and_gradient(&w, &b, &x, &labels, &cfg);
    let h = 1e-5;
    let mut num = Matrix::zeros(10, 5);
    for i in 0..10 {
        for j in 0..5 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[(i, j)] += h;
            wm[(i, j)] -= h;
            num[(i, j)] = (objective(&wp, &b, &x, &labels, &cfg) - objective(&wm, &b, &x, &labels, &cfg)) / (2.0 * h);
        }
    }
    let mut num_b = Vector::zeros(5);
    for j in 0..5 {
        let mut bp = b.clone();
        let mut bm = b.clone();
        bp[j] += h;
        bm[j] -= h;
        num_b[j] = (objective(&w, &bp, &x, &labels, &cfg) - objective(&w, &bm, &x, &labels, &cfg)) / (2.0 * h);
    }
    let rel_w = (&gw - &num).norm() / num.norm();
    let rel_b = (&gb - &num_b).norm() / num_b.norm();
    let rel = rel_w.max(rel_b);
    ensure(rel < 1e-4, || format!("relative error {rel:e}"))?;
    Ok(format!("relative error {rel:.1e}"))
}

/// 9. System ordering on calibrated synthetic views.
fn ordering_reproduction() -> Check {
    let start = Instant::now();
    let names = ["X_P", "X_A", "Z_C", "A", "B", "A+B", "score"];
    let mut runs: Vec<Vec<f64>> = Vec::new();
    for seed in 0..5u64 {
        let d = synth_two_view(260, 5, 4, CALIBRATED_NOISE_P, CALIBRATED_NOISE_A, seed).map_err(|e| e.to_string())?;
        let (tr, te) = stratified_split_indices(&d.dataset, 60.0 / 260.0, seed).map_err(|e| e.to_string())?;
        ensure(tr.len() == 1000 && te.len() == 300, || format!("split {}+{}", tr.len(), te.len()))?;
        let y = d.dataset.label_indices().map_err(|e| e.to_string())?;
        let split = |x: &Matrix| Split {
            train: select_rows(x, &tr),
            test: select_rows(x, &te),
        };
        let cfg = BackendConfig {
            cca_dim: 4,
            cca_ridge: 1e-6,
            lda_dim: 4,
            lda_ridge: 1e-6,
            wccn_ridge: 1e-6,
            order: Composition::LdaWccn,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            score_weights: vec![0.5, 0.5],
            score_space: ScoreSpace::Probability,
        };
        let yt: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
        let ye: Vec<usize> = te.iter().map(|&i| y[i]).collect();
        let out = compare_systems(&split(&d.x_p), &split(&d.x_a), &yt, &ye, &d.dataset.label_set, &cfg).map_err(|e| e.to_string())?;
        runs.push(out.iter().map(|o| o.metrics.accuracy).collect());
    }
    let med: Vec<f64> = (0..names.len()).map(|j| median(runs.iter().map(|r| r[j]).collect())).collect();
    let summary = names.iter().zip(&med).map(|(n, a)| format!("{n} {a:.3}")).collect::<Vec<_>>().join(", ");
    let took = start.elapsed();
    for (j, n) in names.iter().enumerate().take(2) {
        ensure((0.45..=0.60).contains(&med[j]), || format!("{n} median {:.3} outside [0.45, 0.60]; {summary}", med[j]))?;
    }
    ensure(med[2] >= med[0].max(med[1]) - 0.02, || format!("Z_C below best single view; {summary}"))?;
    ensure(med[5] >= med[3] - 0.02, || format!("A+B below A; {summary}"))?;
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    Ok(format!("medians {summary} in {took:.1?}"))
}

/// 10. The dialect confusion fixture gives the expected recall and accuracy.
fn eval_fixture() -> Check {
    let text = std::fs::read_to_string(fixture_path()).map_err(|e| e.to_string())?;
    let cm: ConfusionMatrix = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let m = metrics(&cm);
    let egy = m.per_class[0].recall;
    let total: u64 = FIXTURE_COUNTS.iter().flatten().sum();
    let trace: u64 = (0..5).map(|i| FIXTURE_COUNTS[i][i]).sum();
    ensure((egy - 229.0 / 314.0).abs() < 1e-6, || format!("EGY recall {egy}"))?;
    ensure((m.accuracy - trace as f64 / total as f64).abs() < 1e-6, || format!("accuracy {}", m.accuracy))?;

    // and through the command-line evaluate stage
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[run]\nout_dir = \"{}\"\n", dir.path().join("out").display())).map_err(|e| e.to_string())?;
    let status = Command::new(env!("CARGO_BIN_EXE_vsmfuse"))
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--stage-input")
        .arg(fixture_path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
    let results: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/results.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let cli_recall = results["systems"][0]["per_class"][0]["recall"].as_f64().unwrap_or(f64::NAN);
    ensure((cli_recall - 229.0 / 314.0).abs() < 1e-6, || format!("CLI EGY recall {cli_recall}"))?;
    Ok(format!("EGY recall {egy:.6}, accuracy {:.6}", m.accuracy))
}

fn run_cli(args: &[&str], config: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vsmfuse"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

/// Every regular file under `dir`, relative path and contents, sorted.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// 11. Two identical runs give byte-identical results and containers.
fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let cfg = dir.path().join(format!("run{run}.toml"));
        std::fs::write(&cfg, desk_config(&out, 11)).map_err(|e| e.to_string())?;
        run_cli(&["synth-data"], &cfg)?;
        run_cli(&["run-pipeline"], &cfg)?;
        snaps.push(snapshot(&out));
    }
    let files: Vec<&String> = snaps[0].iter().map(|(n, _)| n).collect();
    ensure(files.iter().any(|n| n.as_str() == "results.json"), || "no results.json".into())?;
    let containers = files.iter().filter(|n| n.ends_with(".mvdm")).count();
    ensure(containers == 15, || format!("{containers} containers"))?;
    ensure(snaps[0] == snaps[1], || {
        let differing: Vec<&String> =
            snaps[0].iter().zip(&snaps[1]).filter(|(a, b)| a != b).map(|(a, _)| &a.0).collect();
        format!("differing files: {differing:?}")
    })?;
    Ok(format!("{} files identical, {containers} containers", files.len()))
}

fn container_round_trip<T: StagePayload + PartialEq + std::fmt::Debug>(model: &T, dir: &Path) -> Result<(), String> {
    let meta = Metadata {
        config_hash: [0xab; 32],
        seed: 99,
    };
    let path = dir.join(format!("{}.mvdm", T::STAGE.name()));
    container::save(&path, &meta, model).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let (meta2, back): (Metadata, T) = container::load(&path).map_err(|e| e.to_string())?;
    ensure(meta2 == meta && &back == model, || format!("{} payload changed", T::STAGE.name()))?;
    let again = container::encode(&meta2, &back).map_err(|e| e.to_string())?;
    ensure(again == bytes, || format!("{} bytes changed", T::STAGE.name()))
}

/// 12. MVF1 files and every container type round-trip bit-exactly.
fn round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fm = FrameMatrix::from_matrix(&gaussian(7, 3, 21)).map_err(|e| e.to_string())?;
    let p = dir.path().join("f.mvf");
    save_frames(&p, &fm).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
    let back = load_frames(&p).map_err(|e| e.to_string())?;
    ensure(back == fm && back.to_bytes() == bytes, || "MVF1 changed".into())?;

    let records: Vec<UtteranceRecord> = (0..12)
        .map(|i| UtteranceRecord {
            id: format!("u{i:02}"),
            label: None,
            phones: Some((0..20).map(|k| format!("p{}", (i * 7 + k * k) % 5)).collect()),
            frames_ref: None,
        })
        .collect();
    let ds = Dataset::new(records, vec!["EGY".into(), "GLF".into()]).map_err(|e| e.to_string())?;
    let vocab: NgramVocab = build_vocab(&ds, &[2, 3].into_iter().collect(), 30).map_err(|e| e.to_string())?;
    let tdm = TermDocMatrix::build(&ds, &vocab).map_err(|e| e.to_string())?;
    let proj = fit_projector(&tdm, 4, ProjectorOptions::default()).map_err(|e| e.to_string())?;
    let frames = vec![FrameMatrix::from_matrix(&gaussian(200, 2, 22)).map_err(|e| e.to_string())?];
    let ubm = train_ubm(&frames, 3, 3, 1, 1e-4).map_err(|e| e.to_string())?;
    let stats: Vec<BaumWelchStats> = (0..6)
        .map(|s| accumulate_stats(&FrameMatrix::from_matrix(&gaussian(30, 2, 30 + s)).unwrap(), &ubm).unwrap())
        .collect();
    let tv = train_tv(&stats, &ubm, 2, 2, 4).map_err(|e| e.to_string())?;
    let xp = gaussian(40, 5, 23);
    let xa = gaussian(40, 4, 24);
    let cca = fit_cca(&xp, &xa, 3, 1e-6).map_err(|e| e.to_string())?;
    let labels = uniform_labels(40, 3, 25);
    let lda = fit_lda(&xp, &labels, 2, 1e-6).map_err(|e| e.to_string())?;
    let wccn = fit_wccn(&xp, &labels, 1e-6).map_err(|e| e.to_string())?;
    let names: Vec<String> = vec!["EGY".into(), "GLF".into(), "LAV".into()];
    let softmax: SoftmaxModel = train_softmax(&xp, &labels, &names, &TrainConfig::default()).map_err(|e| e.to_string())?;

    let d = dir.path();
    container_round_trip(&vocab, d)?;
    container_round_trip(&proj, d)?;
    container_round_trip(&ubm, d)?;
    container_round_trip(&tv, d)?;
    container_round_trip(&cca, d)?;
    container_round_trip(&lda, d)?;
    container_round_trip(&wccn, d)?;
    container_round_trip(&softmax, d)?;
    Ok("MVF1 and 8 container stages bit-exact".into())
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 12] = [
        ("CCA oracle equivalence", cca_oracle_equivalence),
        ("CCA affine invariance", cca_affine_invariance),
        ("Eckart-Young truncation error", eckart_young),
        ("i-vector scalar closed form", ivector_scalar),
        ("UBM EM monotonicity", ubm_monotonicity),
        ("WCCN whitening", wccn_whitening),
        ("LDA dimensionality", lda_dimensionality),
        ("softmax gradient check", softmax_gradient),
        ("system ordering on synthetic views", ordering_reproduction),
        ("evaluation fixture", eval_fixture),
        ("pipeline determinism", cli_determinism),
        ("MVF1 and container round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
