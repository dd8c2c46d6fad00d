//! Prototype classifier: class means of the support set, softmax over negated
//! squared distances.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;

/// Floor applied to per-class variances in variance-normalized distances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Euclidean,
    /// Squared differences divided by the candidate class's per-dimension
    /// variance.
    Varnorm,
}

impl FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMode::Euclidean),
            "varnorm" | "var-norm" => Ok(DistanceMode::Varnorm),
            other => Err(Error::config(format!(
                "unknown distance mode '{other}' (expected euclidean or varnorm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// One row per class.
    pub prototypes: DMatrix<f64>,
    /// Original class id of every row.
    pub class_ids: Vec<i64>,
    /// Per-class variance vectors, one row per class.
    pub class_variances: Option<DMatrix<f64>>,
}

impl PrototypeSet {
    pub fn class_count(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }
}

pub fn build_prototypes(support: &FeatureSet, variances: Option<&[DVector<f64>]>) -> Result<PrototypeSet> {
    let n = support.class_count();
    if n < 2 {
        return Err(Error::InsufficientClasses { needed: 2, found: n });
    }
    let d = support.dim();
    let mut prototypes = DMatrix::zeros(n, d);
    for c in 0..n {
        let rows = support.rows_of_class(c);
        let mut row = prototypes.row_mut(c);
        for &r in rows {
            row += support.features().row(r);
        }
        row /= rows.len() as f64;
    }
    let class_variances = match variances {
        None => None,
        Some(v) => {
            if v.len() != n {
                return Err(Error::InvalidFeatureSet(format!(
                    "{} variance vectors for {n} classes",
                    v.len()
                )));
            }
            let mut m = DMatrix::zeros(n, d);
            for (c, var) in v.iter().enumerate() {
                if var.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: var.len(),
                    });
                }
                if var.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidFeatureSet(format!(
                        "class {} has a negative or non-finite variance",
                        support.class_id(c)
                    )));
                }
                m.row_mut(c).copy_from(&var.transpose());
            }
            Some(m)
        }
    };
    Ok(PrototypeSet {
        prototypes,
        class_ids: support.class_ids().to_vec(),
        class_variances,
    })
}

fn check_query(query: &[f64], protos: &PrototypeSet) -> Result<()> {
    if query.len() != protos.dim() {
        return Err(Error::DimensionMismatch {
            expected: protos.dim(),
            found: query.len(),
        });
    }
    if let Some(col) = query.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    Ok(())
}

/// Squared distance from `query` to every prototype under `mode`.
pub fn distances(query: &[f64], protos: &PrototypeSet, mode: DistanceMode) -> Result<Vec<f64>> {
    check_query(query, protos)?;
    let p = &protos.prototypes;
    match mode {
        DistanceMode::Euclidean => Ok((0..protos.class_count())
            .map(|c| query.iter().enumerate().map(|(j, q)| (q - p[(c, j)]).powi(2)).sum())
            .collect()),
        DistanceMode::Varnorm => {
            let var = protos
                .class_variances
                .as_ref()
                .ok_or_else(|| Error::config("variance-normalized distance needs per-class variances"))?;
            Ok((0..protos.class_count())
                .map(|c| {
                    query
                        .iter()
                        .enumerate()
                        .map(|(j, q)| (q - p[(c, j)]).powi(2) / var[(c, j)].max(VARIANCE_FLOOR))
                        .sum()
                })
                .collect())
        }
    }
}

/// Softmax of negated distances, shifted by the smallest distance.
fn softmax_neg(dist: &[f64]) -> Vec<f64> {
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = dist.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn class_probabilities(query: &[f64], protos: &PrototypeSet) -> Result<Vec<f64>> {
    Ok(softmax_neg(&distances(query, protos, DistanceMode::Euclidean)?))
}

pub fn class_probabilities_varnorm(query: &[f64], protos: &PrototypeSet) -> Result<Vec<f64>> {
    Ok(softmax_neg(&distances(query, protos, DistanceMode::Varnorm)?))
}

/// Row index of the nearest prototype; exact ties go to the smallest
/// original class id.
pub fn predict_index(query: &[f64], protos: &PrototypeSet, mode: DistanceMode) -> Result<usize> {
    let dist = distances(query, protos, mode)?;
    let mut best = 0;
    for c in 1..dist.len() {
        let closer = dist[c] < dist[best];
        let tie_lower_id = dist[c] == dist[best] && protos.class_ids[c] < protos.class_ids[best];
        if closer || tie_lower_id {
            best = c;
        }
    }
    Ok(best)
}

/// Original class id of the nearest prototype.
pub fn predict(query: &[f64], protos: &PrototypeSet, mode: DistanceMode) -> Result<i64> {
    Ok(protos.class_ids[predict_index(query, protos, mode)?])
}

/// Predicted original class id for every row of `queries`.
pub fn predict_all(queries: &FeatureSet, protos: &PrototypeSet, mode: DistanceMode) -> Result<Vec<i64>> {
    (0..queries.rows())
        .map(|i| predict(queries.row_slice(i), protos, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn protos(rows: &[[f64; 2]], ids: &[i64]) -> PrototypeSet {
        PrototypeSet {
            prototypes: DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]),
            class_ids: ids.to_vec(),
            class_variances: None,
        }
    }

    #[test]
    fn prototype_is_support_mean() {
        let fs = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0], vec![0.0, 5.0]], &[0, 0, 1]).unwrap();
        let p = build_prototypes(&fs, None).unwrap();
        assert_eq!(p.prototypes.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0]);
        // one shot: the prototype is the support vector
        assert_eq!(p.prototypes.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 5.0]);
    }

    #[test]
    fn single_class_rejected() {
        let fs = FeatureSet::from_rows(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert!(build_prototypes(&fs, None).is_err());
    }

    #[test]
    fn equidistant_query() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]], &[0, 1]);
        let pr = class_probabilities(&[1.0, 3.0], &p).unwrap();
        assert_relative_eq!(pr[0], 0.5);
        assert_relative_eq!(pr[1], 0.5);
    }

    #[test]
    fn probabilities_by_hand() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]], &[0, 1]);
        let pr = class_probabilities(&[0.0, 0.0], &p).unwrap();
        let e = (-4.0f64).exp();
        assert_relative_eq!(pr[0], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(pr[1], e / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(pr[0], 0.98201, epsilon = 1e-5);
    }

    #[test]
    fn far_prototypes_do_not_overflow() {
        let p = protos(&[[0.0, 0.0], [100.0, 0.0]], &[0, 1]);
        let pr = class_probabilities(&[0.0, 0.0], &p).unwrap();
        assert!(pr.iter().all(|v| v.is_finite()));
        assert!((pr.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert_eq!(pr[0], 1.0);
    }

    #[test]
    fn dimension_and_finiteness_checked() {
        let p = protos(&[[0.0, 0.0], [2.0, 0.0]], &[0, 1]);
        assert!(matches!(
            class_probabilities(&[0.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            class_probabilities(&[f64::NAN, 0.0], &p),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn unit_variances_match_euclidean() {
        let mut p = protos(&[[0.0, 1.0], [2.0, -1.0]], &[0, 1]);
        p.class_variances = Some(DMatrix::from_element(2, 2, 1.0));
        let q = [0.3, 0.7];
        assert_eq!(
            class_probabilities(&q, &p).unwrap(),
            class_probabilities_varnorm(&q, &p).unwrap()
        );
    }

    #[test]
    fn varnorm_distance_by_hand() {
        let mut p = protos(&[[0.0, 0.0], [10.0, 10.0]], &[0, 1]);
        p.class_variances = Some(DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 1.0, 1.0]));
        let d = distances(&[2.0, 2.0], &p, DistanceMode::Varnorm).unwrap();
        assert_eq!(d[0], 5.0);
    }

    #[test]
    fn zero_variance_is_floored() {
        let mut p = protos(&[[0.0, 0.0], [1.0, 0.0]], &[0, 1]);
        p.class_variances = Some(DMatrix::zeros(2, 2));
        let pr = class_probabilities_varnorm(&[0.5, 0.1], &p).unwrap();
        assert!(pr.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn varnorm_without_variances_is_error() {
        let p = protos(&[[0.0, 0.0], [1.0, 0.0]], &[0, 1]);
        assert!(class_probabilities_varnorm(&[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn prediction_at_prototype() {
        let p = protos(&[[0.0, 0.0], [5.0, 5.0]], &[3, 7]);
        assert_eq!(predict(&[5.0, 5.0], &p, DistanceMode::Euclidean).unwrap(), 7);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let p = protos(&[[2.0, 0.0], [-2.0, 0.0]], &[5, 2]);
        assert_eq!(predict(&[0.0, 1.0], &p, DistanceMode::Euclidean).unwrap(), 2);
    }

    #[test]
    fn modes_can_disagree() {
        // query (1.8, 0.5): euclidean 3.49 vs 1.69 picks class 1; class 0 has a
        // wide first axis, giving varnorm 0.0324+0.25 vs 1.69
        let mut p = protos(&[[0.0, 0.0], [3.0, 0.0]], &[0, 1]);
        p.class_variances = Some(DMatrix::from_row_slice(2, 2, &[100.0, 1.0, 1.0, 1.0]));
        let q = [1.8, 0.5];
        let e = distances(&q, &p, DistanceMode::Euclidean).unwrap();
        let v = distances(&q, &p, DistanceMode::Varnorm).unwrap();
        assert_relative_eq!(e[0], 3.49, epsilon = 1e-12);
        assert_relative_eq!(e[1], 1.69, epsilon = 1e-12);
        assert_relative_eq!(v[0], 0.2824, epsilon = 1e-12);
        assert_eq!(predict(&q, &p, DistanceMode::Euclidean).unwrap(), 1);
        assert_eq!(predict(&q, &p, DistanceMode::Varnorm).unwrap(), 0);
    }

    #[test]
    fn distance_mode_parse() {
        assert_eq!("varnorm".parse::<DistanceMode>().unwrap(), DistanceMode::Varnorm);
        assert!("cosine".parse::<DistanceMode>().is_err());
    }
}
