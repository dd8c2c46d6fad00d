use nalgebra::DMatrix;
use proptest::prelude::*;
use protoscope::evaluator::{run_episode, run_evaluation, sample_episode, EvalConfig};
use protoscope::feature_store::{load_features, save_features, FileFormat};
use protoscope::rng;
use protoscope::synthetic::{make_radial_ensemble, sample_features, RadialParams, SyntheticEnsemble};
use protoscope::transforms::{PreparedTransform, StatsSource, TransformSpec};
use protoscope::{Error, FeatureSet};

fn fixture(seed: u64) -> FeatureSet {
    let params = RadialParams {
        classes: 8,
        dim: 6,
        mean_norm: 2.0,
        sigma_par: 0.8,
        sigma_perp: 0.2,
        cone_spread: Some(0.6),
    };
    sample_features(&make_radial_ensemble(&params, seed).unwrap(), 30, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_and_binary_round_trip(rows in 1usize..12, dim in 1usize..6, values in prop::collection::vec(-1e6..1e6f64, 72), ids in prop::collection::vec(-5i64..5, 12)) {
        let data: Vec<Vec<f64>> = (0..rows).map(|i| (0..dim).map(|j| values[i * dim + j]).collect()).collect();
        let fs = FeatureSet::from_rows(&data, &ids[..rows]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        // binary labels are unsigned
        let formats: &[(&str, FileFormat)] = if fs.class_ids().iter().all(|&c| c >= 0) {
            &[("f.csv", FileFormat::Csv), ("f.bin", FileFormat::Binary)]
        } else {
            &[("f.csv", FileFormat::Csv)]
        };
        for &(name, format) in formats {
            let path = dir.path().join(name);
            save_features(&fs, &path, format).unwrap();
            let back = load_features(&path, format).unwrap();
            let expected = match format {
                FileFormat::Csv => fs.features().clone(),
                // binary payloads are f32
                FileFormat::Binary => fs.features().map(|v| v as f32 as f64),
            };
            prop_assert_eq!(back.features(), &expected);
            prop_assert_eq!(back.labels(), fs.labels());
            prop_assert_eq!(back.class_ids(), fs.class_ids());
        }
    }
}

#[test]
fn negative_ids_are_rejected_by_the_binary_writer() {
    let fs = FeatureSet::from_rows(&[vec![1.0], vec![2.0]], &[-1, 3]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(save_features(&fs, dir.path().join("f.bin"), FileFormat::Binary).is_err());
}

#[test]
fn ensemble_json_round_trips_exactly() {
    let params = RadialParams {
        classes: 4,
        dim: 3,
        mean_norm: 1.7,
        sigma_par: 0.3,
        sigma_perp: 0.05,
        cone_spread: None,
    };
    let ens = make_radial_ensemble(&params, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.json");
    ens.save(&path).unwrap();
    assert_eq!(SyntheticEnsemble::load(&path).unwrap(), ens);
}

#[test]
fn full_dimensional_est_leaves_predictions_unchanged() {
    let fs = fixture(3);
    let cfg = EvalConfig {
        k_shot: 5,
        ..EvalConfig::default()
    };
    let none = PreparedTransform::new(TransformSpec::None, None).unwrap();
    let est = PreparedTransform::new(
        TransformSpec::Est {
            est_dim: fs.dim(),
            stats_source: StatsSource::Support,
        },
        None,
    )
    .unwrap();
    for e in 0..30 {
        let ep = sample_episode(&fs, 5, 5, 10, &mut rng::stream(1, e)).unwrap();
        let a = run_episode(&fs, &ep, &none, &cfg).unwrap();
        let b = run_episode(&fs, &ep, &est, &cfg).unwrap();
        assert_eq!(a.predictions, b.predictions, "episode {e}");
    }
}

#[test]
fn evaluation_is_deterministic_and_seed_sensitive() {
    let fs = fixture(1);
    let cfg = EvalConfig {
        episodes: 50,
        seed: 3,
        ..EvalConfig::default()
    };
    let a = run_evaluation(&fs, None, &cfg).unwrap();
    let b = run_evaluation(&fs, None, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_episode_accuracies.len(), 50);
    let c = run_evaluation(&fs, None, &EvalConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.per_episode_accuracies, c.per_episode_accuracies);
}

#[test]
fn too_few_rows_fails_the_same_way_for_every_seed() {
    let fs = fixture(2);
    for seed in 0..3 {
        let cfg = EvalConfig {
            k_shot: 20,
            queries_per_class: 20,
            seed,
            episodes: 5,
            ..EvalConfig::default()
        };
        let err = run_evaluation(&fs, None, &cfg).unwrap_err();
        assert!(
            matches!(
                err,
                Error::InsufficientRows {
                    needed: 40,
                    found: 30,
                    ..
                }
            ),
            "{err}"
        );
    }
}

#[test]
fn one_shot_est_without_base_is_rejected() {
    let fs = fixture(4);
    let cfg = EvalConfig {
        k_shot: 1,
        episodes: 3,
        transform: "est:4".parse().unwrap(),
        ..EvalConfig::default()
    };
    let err = run_evaluation(&fs, None, &cfg).unwrap_err();
    assert!(err.is_config(), "{err}");
    let base = fixture(40);
    assert!(run_evaluation(&fs, Some(&base), &cfg).is_ok());
}

#[test]
fn zero_rows_cannot_be_l2_normalized() {
    // the zero row lands in either the support or the query set
    let fs = FeatureSet::new(
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 2.0]),
        vec![0, 0, 1, 1],
        2,
    )
    .unwrap();
    let cfg = EvalConfig {
        n_way: 2,
        k_shot: 1,
        queries_per_class: 1,
        episodes: 1,
        transform: TransformSpec::L2,
        ..EvalConfig::default()
    };
    let err = run_evaluation(&fs, None, &cfg).unwrap_err();
    assert!(!err.is_config(), "{err}");
    assert!(err.to_string().contains("zero"), "{err}");
}
