use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{column_means, FeatureSet};
use crate::error::{Error, Result};

/// Normalizer for covariance estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divisor {
    /// Divide by the row count. A single-row class gets a zero covariance.
    #[default]
    Population,
    /// Divide by the row count minus one. Needs two rows per class.
    Sample,
}

impl std::str::FromStr for Divisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(Divisor::Population),
            "sample" => Ok(Divisor::Sample),
            other => Err(Error::config(format!("unknown divisor '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Original class identifier.
    pub class_id: i64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub trace_cov: f64,
    pub count: usize,
}

impl ClassStats {
    /// Builds stats from known moments (used for exact population laws).
    pub fn from_moments(class_id: i64, mean: DVector<f64>, covariance: DMatrix<f64>, count: usize) -> Self {
        let trace_cov = covariance.trace();
        Self {
            class_id,
            mean,
            covariance,
            trace_cov,
            count,
        }
    }
}

/// Class-level and ensemble-level moments over a class distribution `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub per_class: Vec<ClassStats>,
    /// Weighted mean of class means.
    pub grand_mean: DVector<f64>,
    /// Weighted covariance of class means around the grand mean.
    pub between_cov: DMatrix<f64>,
    /// Weighted mean of class covariances.
    pub mean_within_cov: DMatrix<f64>,
    pub trace_between: f64,
    pub trace_within: f64,
    /// Weighted variance of the per-class covariance traces.
    pub var_trace_within: f64,
    /// Squared norm of the grand mean.
    pub mu_sq_norm: f64,
    pub class_weights: Vec<f64>,
}

impl EnsembleStats {
    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn dim(&self) -> usize {
        self.grand_mean.len()
    }
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn compute_class_stats(fs: &FeatureSet, divisor: Divisor) -> Result<Vec<ClassStats>> {
    if divisor == Divisor::Sample {
        if let Some(c) = (0..fs.class_count()).find(|&c| fs.rows_of_class(c).len() < 2) {
            return Err(Error::InsufficientRows {
                class: fs.class_id(c),
                found: fs.rows_of_class(c).len(),
                needed: 2,
            });
        }
    }
    let dim = fs.dim();
    let stats = (0..fs.class_count())
        .into_par_iter()
        .map(|c| {
            let rows = fs.rows_of_class(c);
            let n = rows.len();
            let x = DMatrix::from_fn(n, dim, |i, j| fs.features()[(rows[i], j)]);
            let mean = column_means(&x);
            let mut centered = x;
            for mut row in centered.row_iter_mut() {
                row -= mean.transpose();
            }
            let denom = match divisor {
                Divisor::Population => n as f64,
                Divisor::Sample => (n - 1) as f64,
            };
            let covariance = centered.transpose() * &centered / denom;
            ClassStats::from_moments(fs.class_id(c), mean, covariance, n)
        })
        .collect();
    Ok(stats)
}

fn validate_weights(weights: &[f64], classes: usize) -> Result<Vec<f64>> {
    if weights.len() != classes {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} classes",
            weights.len(),
            classes
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

pub fn compute_ensemble_stats(per_class: Vec<ClassStats>, class_weights: &[f64]) -> Result<EnsembleStats> {
    if per_class.is_empty() {
        return Err(Error::InsufficientClasses { needed: 1, found: 0 });
    }
    let weights = validate_weights(class_weights, per_class.len())?;
    let dim = per_class[0].mean.len();
    if let Some(bad) = per_class.iter().find(|s| s.mean.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.mean.len(),
        });
    }

    let mut grand_mean = DVector::zeros(dim);
    let mut mean_within_cov = DMatrix::zeros(dim, dim);
    for (s, &w) in per_class.iter().zip(&weights) {
        grand_mean.axpy(w, &s.mean, 1.0);
        mean_within_cov += &s.covariance * w;
    }
    let mut between_cov = DMatrix::zeros(dim, dim);
    for (s, &w) in per_class.iter().zip(&weights) {
        let d = &s.mean - &grand_mean;
        between_cov.ger(w, &d, &d, 1.0);
    }
    let trace_within: f64 = mean_within_cov.trace();
    let mean_trace: f64 = per_class.iter().zip(&weights).map(|(s, w)| w * s.trace_cov).sum();
    let var_trace_within = per_class
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * (s.trace_cov - mean_trace).powi(2))
        .sum();

    Ok(EnsembleStats {
        trace_between: between_cov.trace(),
        trace_within,
        var_trace_within,
        mu_sq_norm: grand_mean.norm_squared(),
        grand_mean,
        between_cov,
        mean_within_cov,
        per_class,
        class_weights: weights,
    })
}

/// Class and ensemble statistics of a feature set under uniform class weights.
pub fn ensemble_stats_from_features(fs: &FeatureSet, divisor: Divisor) -> Result<EnsembleStats> {
    let per_class = compute_class_stats(fs, divisor)?;
    let n = per_class.len();
    compute_ensemble_stats(per_class, &uniform_weights(n))
}

/// Per-class variance of the squared row norm. L2-normalized sets report
/// exactly zero.
pub fn norm_sq_variance_per_class(fs: &FeatureSet, divisor: Divisor) -> Result<Vec<f64>> {
    (0..fs.class_count())
        .map(|c| {
            let rows = fs.rows_of_class(c);
            let n = rows.len();
            if divisor == Divisor::Sample && n < 2 {
                return Err(Error::InsufficientRows {
                    class: fs.class_id(c),
                    found: n,
                    needed: 2,
                });
            }
            if fs.is_unit_norm() {
                return Ok(0.0);
            }
            let sq: Vec<f64> = rows
                .iter()
                .map(|&r| fs.row_slice(r).iter().map(|v| v * v).sum())
                .collect();
            let mean = sq.iter().sum::<f64>() / n as f64;
            let ss: f64 = sq.iter().map(|q| (q - mean).powi(2)).sum();
            Ok(match divisor {
                Divisor::Population => ss / n as f64,
                Divisor::Sample => ss / (n - 1) as f64,
            })
        })
        .collect()
}
