use nalgebra::DMatrix;
use proptest::prelude::*;
use protoscope::classifier::{build_prototypes, class_probabilities, predict_all, predict_index, DistanceMode};
use protoscope::FeatureSet;

/// Support of `n` classes with `k` rows each, plus `q` free query rows.
fn episode_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (2usize..5, 1usize..4, 1usize..5, 1usize..6).prop_flat_map(|(n, k, dim, q)| {
        (
            Just(n),
            Just(k),
            Just(dim),
            prop::collection::vec(-5.0..5.0f64, n * k * dim),
            prop::collection::vec(-5.0..5.0f64, q * dim),
        )
    })
}

fn support_set(n: usize, k: usize, dim: usize, values: &[f64]) -> FeatureSet {
    let features = DMatrix::from_row_slice(n * k, dim, values);
    let labels = (0..n * k).map(|i| i / k).collect();
    FeatureSet::new(features, labels, n).unwrap()
}

fn query_set(dim: usize, values: &[f64]) -> FeatureSet {
    let rows = values.len() / dim;
    FeatureSet::new(DMatrix::from_row_slice(rows, dim, values), vec![0; rows], 1).unwrap()
}

/// Random rotation from the QR factor of a seeded matrix.
fn rotation(dim: usize, seed: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        seed[(i * dim + j) % seed.len()] + if i == j { 3.0 } else { 0.0 }
    });
    m.qr().q()
}

/// Predictions that are not near a tie; transformed inputs are only required
/// to agree where the decision margin exceeds rounding noise.
fn stable_predictions(support: &FeatureSet, query: &FeatureSet) -> Vec<Option<i64>> {
    let protos = build_prototypes(support, None).unwrap();
    (0..query.rows())
        .map(|i| {
            let d = protoscope::classifier::distances(query.row_slice(i), &protos, DistanceMode::Euclidean).unwrap();
            let mut sorted = d.clone();
            sorted.sort_by(f64::total_cmp);
            let scale = sorted[sorted.len() - 1].max(1.0);
            (sorted[1] - sorted[0] > 1e-6 * scale)
                .then(|| protos.class_ids[predict_index(query.row_slice(i), &protos, DistanceMode::Euclidean).unwrap()])
        })
        .collect()
}

fn agree(a: &[Option<i64>], b: &[Option<i64>]) -> bool {
    a.iter().zip(b).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    })
}

proptest! {
    #[test]
    fn translation_invariance((n, k, dim, s, q) in episode_strategy(), shift in prop::collection::vec(-50.0..50.0f64, 5)) {
        let support = support_set(n, k, dim, &s);
        let query = query_set(dim, &q);
        let t = |fs: &FeatureSet| {
            let mut f = fs.features().clone();
            for mut row in f.row_iter_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += shift[j];
                }
            }
            fs.with_features(f).unwrap()
        };
        let before = stable_predictions(&support, &query);
        let after = stable_predictions(&t(&support), &t(&query));
        prop_assert!(agree(&before, &after));
    }

    #[test]
    fn rotation_invariance((n, k, dim, s, q) in episode_strategy(), seed in prop::collection::vec(-1.0..1.0f64, 25)) {
        let support = support_set(n, k, dim, &s);
        let query = query_set(dim, &q);
        let r = rotation(dim, &seed);
        let t = |fs: &FeatureSet| fs.with_features(fs.features() * &r).unwrap();
        prop_assert!(agree(&stable_predictions(&support, &query), &stable_predictions(&t(&support), &t(&query))));
    }

    #[test]
    fn positive_scale_invariance((n, k, dim, s, q) in episode_strategy(), scale in 1e-3..1e3f64) {
        let support = support_set(n, k, dim, &s);
        let query = query_set(dim, &q);
        let before = stable_predictions(&support, &query);
        let after = stable_predictions(&support.scaled(scale).unwrap(), &query.scaled(scale).unwrap());
        prop_assert!(agree(&before, &after));
    }

    #[test]
    fn probabilities_form_a_distribution((n, k, dim, s, q) in episode_strategy()) {
        let support = support_set(n, k, dim, &s);
        let protos = build_prototypes(&support, None).unwrap();
        for row in q.chunks(dim) {
            let p = class_probabilities(row, &protos).unwrap();
            prop_assert_eq!(p.len(), n);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // the most probable class is the predicted one
            let best = predict_index(row, &protos, DistanceMode::Euclidean).unwrap();
            prop_assert!(p.iter().all(|&v| v <= p[best]));
        }
    }
}

#[test]
fn exact_tie_goes_to_smallest_original_id() {
    let support = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]], &[9, 4, 7]).unwrap();
    let protos = build_prototypes(&support, None).unwrap();
    let query = query_set(2, &[0.0, 0.0]);
    assert_eq!(predict_all(&query, &protos, DistanceMode::Euclidean).unwrap(), vec![4]);
}

#[test]
fn single_row_support_prototype_is_the_row() {
    let support = FeatureSet::from_rows(&[vec![3.0, -2.0], vec![0.5, 0.5]], &[1, 2]).unwrap();
    let protos = build_prototypes(&support, None).unwrap();
    assert_eq!(
        protos.prototypes.row(0).iter().copied().collect::<Vec<_>>(),
        vec![3.0, -2.0]
    );
}
