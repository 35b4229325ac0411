//! Property-based checks of invariants that must hold for any input.

mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use vsmfuse::classifier::{predict_proba, score_fuse, train_softmax, ScoreSpace, TrainConfig};
use vsmfuse::corpus::{stratified_split_indices, DialectLabel, Dataset, FrameMatrix, UtteranceRecord};
use vsmfuse::eval::{metrics, ConfusionMatrix};
use vsmfuse::fusion::fit_cca;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("L{i}")).collect()
}

/// Cyclic column shift: still a row-stochastic matrix, but a different one.
fn rotate_columns(p: &M) -> M {
    M::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, (j + 1) % p.ncols())])
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn cca_correlations_survive_invertible_affine_maps(seed in 0u64..1000, shift in -5.0f64..5.0) {
        let xp = gaussian(80, 4, seed);
        let xa = xp.columns(0, 3) * gaussian(3, 3, seed + 1) + gaussian(80, 3, seed + 2);
        let base = fit_cca(&xp, &xa, 3, 1e-12).unwrap();
        let mp = &xp * conditioned(4, 10.0, seed + 3) + M::from_element(80, 4, shift);
        let ma = &xa * conditioned(3, 10.0, seed + 4);
        let moved = fit_cca(&mp, &ma, 3, 1e-12).unwrap();
        prop_assert!((&base.correlations - &moved.correlations).amax() < 1e-6);
        prop_assert!(base.correlations.iter().all(|&r| (-1e-12..=1.0 + 1e-12).contains(&r)));
    }

    #[test]
    fn cca_is_symmetric_in_its_views(seed in 0u64..1000) {
        let xp = gaussian(60, 5, seed);
        let xa = xp.columns(1, 3) + gaussian(60, 3, seed + 7) * 0.5;
        let ab = fit_cca(&xp, &xa, 3, 1e-10).unwrap();
        let ba = fit_cca(&xa, &xp, 3, 1e-10).unwrap();
        prop_assert!((&ab.correlations - &ba.correlations).amax() < 1e-8);
    }

    #[test]
    fn posteriors_lie_on_the_simplex(seed in 0u64..1000, classes in 2usize..6) {
        let x = gaussian(40, 3, seed) * 3.0;
        let y = uniform_labels(40, classes, seed + 1);
        let cfg = TrainConfig { epochs: 5, seed, ..TrainConfig::default() };
        let m = train_softmax(&x, &y, &labels(classes), &cfg).unwrap();
        let p = predict_proba(&m, &(gaussian(15, 3, seed + 2) * 50.0)).unwrap();
        for i in 0..p.nrows() {
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
        for space in [ScoreSpace::Probability, ScoreSpace::LogOdds] {
            let f = score_fuse(&[p.clone(), rotate_columns(&p)], &[0.3, 0.7], space).unwrap();
            for i in 0..f.nrows() {
                prop_assert!(f.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((f.row(i).sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metrics_follow_a_class_relabelling(
        counts in proptest::collection::vec(0u64..40, 16),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let rows: Vec<Vec<u64>> = counts.chunks(4).map(|c| c.to_vec()).collect();
        let cm = ConfusionMatrix::new(labels(4), rows.clone()).unwrap();
        let permuted: Vec<Vec<u64>> = (0..4).map(|r| (0..4).map(|c| rows[perm[r]][perm[c]]).collect()).collect();
        let names: Vec<String> = perm.iter().map(|&p| format!("L{p}")).collect();
        let pm = ConfusionMatrix::new(names, permuted).unwrap();
        let (a, b) = (metrics(&cm), metrics(&pm));
        prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
        for (k, &p) in perm.iter().enumerate() {
            prop_assert_eq!(&b.per_class[k], &a.per_class[p]);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(
        class_of in proptest::collection::vec(0usize..3, 6..80),
        fraction in 0.05f64..0.95,
        seed in 0u64..1000,
    ) {
        let set = vec!["EGY".to_string(), "GLF".to_string(), "LAV".to_string()];
        let records = class_of
            .iter()
            .enumerate()
            .map(|(i, &c)| UtteranceRecord {
                id: format!("r{i}"),
                label: Some(DialectLabel::new(&set[c], &set).unwrap()),
                phones: None,
                frames_ref: None,
            })
            .collect();
        let ds = Dataset::new(records, set).unwrap();
        let (train, test) = stratified_split_indices(&ds, fraction, seed).unwrap();
        let a: BTreeSet<usize> = train.iter().copied().collect();
        let b: BTreeSet<usize> = test.iter().copied().collect();
        prop_assert_eq!(a.len(), train.len());
        prop_assert_eq!(b.len(), test.len());
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), class_of.len());
        for c in 0..3 {
            let n = class_of.iter().filter(|&&v| v == c).count() as f64;
            let t = test.iter().filter(|&&i| class_of[i] == c).count() as f64;
            prop_assert!(t >= (n * fraction).floor() && t <= (n * fraction).ceil());
        }
    }

    #[test]
    fn frame_files_round_trip_exactly(
        rows in 1usize..20,
        cols in 1usize..12,
        values in proptest::collection::vec(any::<f32>(), 240),
    ) {
        let v: Vec<f32> = values[..rows * cols].to_vec();
        let m = FrameMatrix::new(rows, cols, v.clone()).unwrap();
        let back = FrameMatrix::from_bytes(&m.to_bytes()).unwrap();
        prop_assert_eq!(back.frames(), rows);
        prop_assert_eq!(back.dim(), cols);
        let same = back.values().iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }
}
