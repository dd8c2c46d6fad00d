//! Embedding transforms applied before prototype classification.
//!
//! Every transform that is fitted (centering vector, LDA or EST projection)
//! is fitted once per episode and then applied identically to the support
//! and query sets. EST followed by L2 always runs in that order.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{compute_class_stats, ensemble_stats_from_features, Divisor, EnsembleStats, FeatureSet};
use crate::linalg::{orthonormalize_columns, symmetric_eigen_desc};

/// Rows with a norm below this are treated as zero.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

pub const DEFAULT_LDA_LAMBDA: f64 = 1e-4;
pub const DEFAULT_EST_DIM: usize = 60;

pub fn l2_normalize(fs: &FeatureSet) -> Result<FeatureSet> {
    let mut out = fs.features().clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm >= ZERO_NORM_THRESHOLD) {
            return Err(Error::ZeroNorm { row: i });
        }
        row /= norm;
    }
    Ok(fs.with_features(out)?.mark_unit_norm())
}

/// Subtracts `center` from every row, then L2-normalizes.
pub fn center_then_l2(fs: &FeatureSet, center: &DVector<f64>) -> Result<FeatureSet> {
    if center.len() != fs.dim() {
        return Err(Error::DimensionMismatch {
            expected: fs.dim(),
            found: center.len(),
        });
    }
    let mut shifted = fs.features().clone();
    for mut row in shifted.row_iter_mut() {
        row -= center.transpose();
    }
    l2_normalize(&fs.with_features(shifted)?)
}

/// Unbiased per-dimension variance of every class, indexed by dense class id.
pub fn estimate_class_variances(support: &FeatureSet) -> Result<Vec<DVector<f64>>> {
    let stats = compute_class_stats(support, Divisor::Sample)?;
    Ok(stats.into_iter().map(|s| s.covariance.diagonal()).collect())
}

/// Orthonormal linear map `x -> basis^T (x - origin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    basis: DMatrix<f64>,
    origin: Option<DVector<f64>>,
    eigenvalues: Vec<f64>,
}

impl Projection {
    pub fn new(basis: DMatrix<f64>, origin: Option<DVector<f64>>, eigenvalues: Vec<f64>) -> Result<Self> {
        let (source, target) = basis.shape();
        if target == 0 || target > source {
            return Err(Error::config(format!(
                "projection target dimension {target} must be in 1..={source}"
            )));
        }
        if let Some(o) = &origin {
            if o.len() != source {
                return Err(Error::DimensionMismatch {
                    expected: source,
                    found: o.len(),
                });
            }
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::<f64>::identity(target, target)).amax();
        if err > 1e-8 {
            return Err(Error::Eigen(format!(
                "basis is not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(Self {
            basis,
            origin,
            eigenvalues,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn origin(&self) -> Option<&DVector<f64>> {
        self.origin.as_ref()
    }

    /// Eigenvalues matching the basis columns.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn source_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, fs: &FeatureSet) -> Result<FeatureSet> {
        if fs.dim() != self.source_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.source_dim(),
                found: fs.dim(),
            });
        }
        let projected = match &self.origin {
            None => fs.features() * &self.basis,
            Some(o) => {
                let mut shifted = fs.features().clone();
                for mut row in shifted.row_iter_mut() {
                    row -= o.transpose();
                }
                shifted * &self.basis
            }
        };
        fs.with_features(projected)
    }
}

pub fn apply_projection(fs: &FeatureSet, proj: &Projection) -> Result<FeatureSet> {
    proj.apply(fs)
}

/// Regularized LDA fitted on a support set: top `min(C - 1, D)` eigenvectors
/// of `(within + lambda I)^-1 between`, where `between` is the covariance of
/// the class prototypes and `within` the mean class covariance.
pub fn fit_lda(support: &FeatureSet, lambda: f64) -> Result<Projection> {
    if support.class_count() < 2 {
        return Err(Error::InsufficientClasses {
            needed: 2,
            found: support.class_count(),
        });
    }
    let stats = ensemble_stats_from_features(support, Divisor::Population)?;
    let target = (support.class_count() - 1).min(support.dim());
    lda_from_scatter(&stats.between_cov, &stats.mean_within_cov, lambda, target)
}

/// Solves the symmetric-definite problem `between v = l (within + lambda I) v`
/// by Cholesky whitening and returns an orthonormal basis of the leading
/// `target_dim` generalized eigenvectors.
pub fn lda_from_scatter(
    between: &DMatrix<f64>,
    within: &DMatrix<f64>,
    lambda: f64,
    target_dim: usize,
) -> Result<Projection> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("LDA lambda must be >= 0, got {lambda}")));
    }
    let d = between.nrows();
    let regularized = within + DMatrix::<f64>::identity(d, d) * lambda;
    let chol = Cholesky::new(crate::linalg::symmetrize(&regularized))
        .ok_or_else(|| Error::Eigen("regularized within-class covariance is not positive definite".into()))?;
    let l = chol.l();
    let linv_b = l
        .solve_lower_triangular(between)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let whitened = l
        .solve_lower_triangular(&linv_b.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let eig = symmetric_eigen_desc(&whitened)?;
    let target = target_dim.clamp(1, d);
    let leading = eig.vectors.columns(0, target).into_owned();
    let generalized = l
        .tr_solve_lower_triangular(&leading)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let basis = orthonormalize_columns(&generalized)?;
    Projection::new(basis, None, eig.values[..target].to_vec())
}

/// Clips a requested EST dimension to the feature dimension.
pub fn clip_est_dim(requested: usize, dim: usize) -> (usize, Option<String>) {
    if requested > dim {
        let msg = format!("EST dimension {requested} exceeds feature dimension {dim}; using {dim}");
        (dim, Some(msg))
    } else {
        (requested.max(1), None)
    }
}

/// EST: leading eigenvectors of `between - within`, ordered by signed
/// eigenvalue.
pub fn fit_est(stats: &EnsembleStats, target_dim: usize) -> Result<Projection> {
    est_from_scatter(&stats.between_cov, &stats.mean_within_cov, target_dim)
}

pub fn est_from_scatter(between: &DMatrix<f64>, within: &DMatrix<f64>, target_dim: usize) -> Result<Projection> {
    let (target, warning) = clip_est_dim(target_dim, between.nrows());
    if let Some(w) = warning {
        log::warn!("{w}");
    }
    let eig = symmetric_eigen_desc(&(between - within))?;
    let basis = eig.vectors.columns(0, target).into_owned();
    Projection::new(basis, None, eig.values[..target].to_vec())
}

/// Where fitted statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsSource {
    /// EST: the episode support when it has two or more shots, the base
    /// split in 1-shot. Centering: the base split when one is supplied,
    /// else the support set.
    #[default]
    Auto,
    Support,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    None,
    L2,
    CenterL2 { stats_source: StatsSource },
    VarNorm,
    Lda { lambda: f64 },
    Est { est_dim: usize, stats_source: StatsSource },
    EstL2 { est_dim: usize, stats_source: StatsSource },
}

impl TransformSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::None => "none",
            TransformSpec::L2 => "l2",
            TransformSpec::CenterL2 { .. } => "center-l2",
            TransformSpec::VarNorm => "var-norm",
            TransformSpec::Lda { .. } => "lda",
            TransformSpec::Est { .. } => "est",
            TransformSpec::EstL2 { .. } => "est-l2",
        }
    }

    pub fn with_stats_source(self, source: StatsSource) -> Self {
        match self {
            TransformSpec::CenterL2 { .. } => TransformSpec::CenterL2 { stats_source: source },
            TransformSpec::Est { est_dim, .. } => TransformSpec::Est {
                est_dim,
                stats_source: source,
            },
            TransformSpec::EstL2 { est_dim, .. } => TransformSpec::EstL2 {
                est_dim,
                stats_source: source,
            },
            other => other,
        }
    }

    fn stats_source(&self) -> Option<StatsSource> {
        match *self {
            TransformSpec::CenterL2 { stats_source }
            | TransformSpec::Est { stats_source, .. }
            | TransformSpec::EstL2 { stats_source, .. } => Some(stats_source),
            _ => None,
        }
    }

    /// Checks that the transform can run with `k_shot` support rows per class
    /// and the given availability of a base split.
    pub fn check_compatible(&self, k_shot: usize, has_base: bool) -> Result<()> {
        match *self {
            TransformSpec::VarNorm if k_shot < 2 => Err(Error::config(
                "var-norm requires k-shot >= 2: per-class sample variances are undefined with one support row",
            )),
            TransformSpec::Lda { lambda } if !(lambda > 0.0) => {
                Err(Error::config(format!("LDA lambda must be > 0, got {lambda}")))
            }
            TransformSpec::Est { stats_source, .. } | TransformSpec::EstL2 { stats_source, .. } => {
                let base_needed = match stats_source {
                    StatsSource::Base => true,
                    StatsSource::Auto => k_shot < 2,
                    StatsSource::Support => false,
                };
                if base_needed && !has_base {
                    Err(Error::config(
                        "EST needs base-split features here: with one support row per class the within-class \
                         covariance cannot be estimated from the support set, so 1-shot EST is fitted on \
                         base-class statistics (pass --base-features)",
                    ))
                } else {
                    Ok(())
                }
            }
            TransformSpec::CenterL2 {
                stats_source: StatsSource::Base,
            } if !has_base => Err(Error::config(
                "center-l2 with base statistics needs base-split features",
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Lda { lambda } => write!(f, "lda:{lambda}"),
            TransformSpec::Est { est_dim, .. } => write!(f, "est:{est_dim}"),
            TransformSpec::EstL2 { est_dim, .. } => write!(f, "est-l2:{est_dim}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Parses `none | l2 | center-l2 | var-norm | lda[:lambda] | est[:dim] | est-l2[:dim]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let no_arg = |spec: TransformSpec| match arg {
            None => Ok(spec),
            Some(a) => Err(Error::config(format!(
                "transform '{name}' takes no parameter, got '{a}'"
            ))),
        };
        let dim = || -> Result<usize> {
            match arg {
                None => Ok(DEFAULT_EST_DIM),
                Some(a) => match a.parse::<usize>() {
                    Ok(d) if d >= 1 => Ok(d),
                    _ => Err(Error::config(format!(
                        "EST dimension must be a positive integer, got '{a}'"
                    ))),
                },
            }
        };
        match name {
            "none" => no_arg(TransformSpec::None),
            "l2" => no_arg(TransformSpec::L2),
            "center-l2" => no_arg(TransformSpec::CenterL2 {
                stats_source: StatsSource::Auto,
            }),
            "var-norm" => no_arg(TransformSpec::VarNorm),
            "lda" => {
                let lambda = match arg {
                    None => DEFAULT_LDA_LAMBDA,
                    Some(a) => a
                        .parse::<f64>()
                        .ok()
                        .filter(|l| *l > 0.0 && l.is_finite())
                        .ok_or_else(|| Error::config(format!("LDA lambda must be a positive number, got '{a}'")))?,
                };
                Ok(TransformSpec::Lda { lambda })
            }
            "est" => Ok(TransformSpec::Est {
                est_dim: dim()?,
                stats_source: StatsSource::Auto,
            }),
            "est-l2" => Ok(TransformSpec::EstL2 {
                est_dim: dim()?,
                stats_source: StatsSource::Auto,
            }),
            other => Err(Error::config(format!(
                "unknown transform '{other}' (expected none, l2, center-l2, var-norm, lda[:lambda], est[:dim], est-l2[:dim])"
            ))),
        }
    }
}

/// Support and query sets after a transform, plus what the classifier needs
/// to know about it.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub support: FeatureSet,
    pub query: FeatureSet,
    /// Per-class variance vectors for variance-normalized distances.
    pub class_variances: Option<Vec<DVector<f64>>>,
    pub warnings: Vec<String>,
}

impl Transformed {
    pub fn output_dim(&self) -> usize {
        self.support.dim()
    }
}

/// A transform spec with everything that depends only on the base split
/// (EST projection, centering vector) fitted up front.
#[derive(Debug, Clone)]
pub struct PreparedTransform {
    spec: TransformSpec,
    base_stats: Option<EnsembleStats>,
    base_center: Option<DVector<f64>>,
    base_projection: Option<Projection>,
    warnings: Vec<String>,
}

impl PreparedTransform {
    pub fn new(spec: TransformSpec, base: Option<&FeatureSet>) -> Result<Self> {
        let mut prepared = Self {
            spec,
            base_stats: None,
            base_center: None,
            base_projection: None,
            warnings: Vec::new(),
        };
        let Some(base) = base else {
            if spec.stats_source() == Some(StatsSource::Base) {
                return Err(Error::config(format!(
                    "transform {spec} uses base statistics but no base features were supplied"
                )));
            }
            return Ok(prepared);
        };
        match spec {
            TransformSpec::CenterL2 { stats_source } if stats_source != StatsSource::Support => {
                prepared.base_center = Some(base.mean_row());
            }
            TransformSpec::Est { est_dim, stats_source } | TransformSpec::EstL2 { est_dim, stats_source }
                if stats_source != StatsSource::Support =>
            {
                let stats = ensemble_stats_from_features(base, Divisor::Population)?;
                let (_, warning) = clip_est_dim(est_dim, base.dim());
                prepared.warnings.extend(warning);
                prepared.base_projection = Some(fit_est(&stats, est_dim)?);
                prepared.base_stats = Some(stats);
            }
            _ => {}
        }
        Ok(prepared)
    }

    pub fn spec(&self) -> TransformSpec {
        self.spec
    }

    /// Warnings produced while fitting on the base split.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn base_stats(&self) -> Option<&EnsembleStats> {
        self.base_stats.as_ref()
    }

    pub fn apply(&self, support: &FeatureSet, query: &FeatureSet) -> Result<Transformed> {
        if support.dim() != query.dim() {
            return Err(Error::DimensionMismatch {
                expected: support.dim(),
                found: query.dim(),
            });
        }
        let min_shot = (0..support.class_count())
            .map(|c| support.rows_of_class(c).len())
            .min()
            .unwrap_or(0);
        let plain = |support: FeatureSet, query: FeatureSet| Transformed {
            support,
            query,
            class_variances: None,
            warnings: Vec::new(),
        };
        match self.spec {
            TransformSpec::None => Ok(plain(support.clone(), query.clone())),
            TransformSpec::L2 => Ok(plain(l2_normalize(support)?, l2_normalize(query)?)),
            TransformSpec::CenterL2 { .. } => {
                let center = match &self.base_center {
                    Some(c) => c.clone(),
                    None => support.mean_row(),
                };
                Ok(plain(
                    center_then_l2(support, &center)?,
                    center_then_l2(query, &center)?,
                ))
            }
            TransformSpec::VarNorm => {
                let variances = estimate_class_variances(support)?;
                let mut out = plain(support.clone(), query.clone());
                out.class_variances = Some(variances);
                Ok(out)
            }
            TransformSpec::Lda { lambda } => {
                let proj = fit_lda(support, lambda)?;
                Ok(plain(proj.apply(support)?, proj.apply(query)?))
            }
            TransformSpec::Est { est_dim, stats_source } | TransformSpec::EstL2 { est_dim, stats_source } => {
                let use_support = match stats_source {
                    StatsSource::Support => true,
                    StatsSource::Base => false,
                    StatsSource::Auto => min_shot >= 2,
                };
                let mut warnings = Vec::new();
                let fitted;
                let proj = if use_support {
                    let stats = ensemble_stats_from_features(support, Divisor::Population)?;
                    let (_, warning) = clip_est_dim(est_dim, support.dim());
                    warnings.extend(warning);
                    fitted = fit_est(&stats, est_dim)?;
                    &fitted
                } else {
                    warnings.extend(self.warnings.iter().cloned());
                    self.base_projection.as_ref().ok_or_else(|| {
                        Error::config("1-shot EST is fitted on base-class statistics; supply base features")
                    })?
                };
                let (mut s, mut q) = (proj.apply(support)?, proj.apply(query)?);
                if matches!(self.spec, TransformSpec::EstL2 { .. }) {
                    s = l2_normalize(&s)?;
                    q = l2_normalize(&q)?;
                }
                let mut out = plain(s, q);
                out.warnings = warnings;
                Ok(out)
            }
        }
    }
}

/// Fits `spec` (on `support`, or on `base` where it calls for base-split
/// statistics) and applies it to both sets.
pub fn apply_pipeline(
    support: &FeatureSet,
    query: &FeatureSet,
    spec: TransformSpec,
    base: Option<&FeatureSet>,
) -> Result<Transformed> {
    PreparedTransform::new(spec, base)?.apply(support, query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(rows: &[Vec<f64>], labels: &[i64]) -> FeatureSet {
        FeatureSet::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn l2_three_four_five() {
        let out = l2_normalize(&set(&[vec![3.0, 4.0]], &[0])).unwrap();
        assert_relative_eq!(out.row_slice(0)[0], 0.6);
        assert_relative_eq!(out.row_slice(0)[1], 0.8);
        assert!(out.is_unit_norm());
    }

    #[test]
    fn l2_zero_row_is_error() {
        let err = l2_normalize(&set(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[0, 0])).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { row: 1 }));
    }

    #[test]
    fn centering_symmetric_pair() {
        let fs = set(&[vec![1.0, 0.0], vec![3.0, 0.0]], &[0, 1]);
        let out = center_then_l2(&fs, &DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(out.row_slice(0), &[-1.0, 0.0]);
        assert_eq!(out.row_slice(1), &[1.0, 0.0]);
    }

    #[test]
    fn centering_on_zero_is_plain_l2() {
        let fs = set(&[vec![1.0, 2.0], vec![-3.0, 0.5]], &[0, 1]);
        let a = center_then_l2(&fs, &DVector::zeros(2)).unwrap();
        let b = l2_normalize(&fs).unwrap();
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn centering_row_at_center_is_error() {
        let fs = set(&[vec![1.0, 2.0]], &[0]);
        assert!(center_then_l2(&fs, &DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn class_variances_unbiased() {
        let fs = set(&[vec![0.0, 0.0], vec![2.0, 4.0]], &[0, 0]);
        let v = estimate_class_variances(&fs).unwrap();
        assert_eq!(v[0].as_slice(), &[2.0, 8.0]);
    }

    #[test]
    fn class_variances_constant_class() {
        let fs = set(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[0, 0]);
        assert_eq!(estimate_class_variances(&fs).unwrap()[0].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn class_variances_need_two_shots() {
        let fs = set(&[vec![1.0], vec![2.0]], &[0, 1]);
        assert!(matches!(
            estimate_class_variances(&fs),
            Err(Error::InsufficientRows { found: 1, .. })
        ));
    }

    #[test]
    fn lda_picks_highest_ratio_axis() {
        let between = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let within = DMatrix::identity(2, 2);
        let p = lda_from_scatter(&between, &within, 1e-9, 1).unwrap();
        assert_relative_eq!(p.basis()[(0, 0)].abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.basis()[(1, 0)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn lda_accounts_for_within_scale() {
        // ratio 4/16 on axis 0 loses to 1/1 on axis 1
        let between = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let within = DMatrix::from_diagonal(&DVector::from_vec(vec![16.0, 1.0]));
        let p = lda_from_scatter(&between, &within, 1e-9, 1).unwrap();
        assert_relative_eq!(p.basis()[(1, 0)].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lda_two_classes_gives_one_dim() {
        let fs = set(
            &[
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.1, 0.0],
                vec![5.0, 1.0, 0.0],
                vec![6.0, 1.2, 0.5],
            ],
            &[0, 0, 1, 1],
        );
        let p = fit_lda(&fs, DEFAULT_LDA_LAMBDA).unwrap();
        assert_eq!(p.target_dim(), 1);
    }

    #[test]
    fn lda_single_class_is_error() {
        let fs = set(&[vec![0.0], vec![1.0]], &[0, 0]);
        assert!(matches!(fit_lda(&fs, 1e-4), Err(Error::InsufficientClasses { .. })));
    }

    #[test]
    fn est_diagonal_example() {
        let between = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let within = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let p = est_from_scatter(&between, &within, 1).unwrap();
        assert_relative_eq!(p.basis()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_eq!(p.eigenvalues(), &[3.0]);
    }

    #[test]
    fn est_orders_by_signed_value() {
        // eigenvalues 1 and -5: the large negative direction comes last
        let between = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0]));
        let within = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.0]));
        let p = est_from_scatter(&between, &within, 2).unwrap();
        assert_eq!(p.eigenvalues(), &[1.0, -5.0]);
        assert_relative_eq!(p.basis()[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn est_dim_is_clipped() {
        let m = DMatrix::identity(2, 2);
        let p = est_from_scatter(&m, &DMatrix::zeros(2, 2), 60).unwrap();
        assert_eq!(p.target_dim(), 2);
        assert!(clip_est_dim(60, 2).1.is_some());
        assert!(clip_est_dim(2, 2).1.is_none());
    }

    #[test]
    fn projection_identity_and_pick() {
        let fs = set(&[vec![3.0, 4.0], vec![1.0, 2.0]], &[0, 1]);
        let id = Projection::new(DMatrix::identity(2, 2), None, vec![]).unwrap();
        assert_eq!(id.apply(&fs).unwrap().features(), fs.features());
        let e1 = Projection::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), None, vec![]).unwrap();
        let out = e1.apply(&fs).unwrap();
        assert_eq!(out.features().as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn projection_with_origin() {
        let fs = set(&[vec![3.0, 4.0]], &[0]);
        let p = Projection::new(
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Some(DVector::from_vec(vec![1.0, 1.0])),
            vec![],
        )
        .unwrap();
        assert_eq!(p.apply(&fs).unwrap().row_slice(0), &[3.0]);
    }

    #[test]
    fn projection_dim_mismatch() {
        let fs = set(&[vec![3.0, 4.0, 5.0]], &[0]);
        let p = Projection::new(DMatrix::identity(2, 2), None, vec![]).unwrap();
        assert!(matches!(p.apply(&fs), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn projection_rejects_non_orthonormal_basis() {
        assert!(Projection::new(DMatrix::from_column_slice(2, 1, &[2.0, 0.0]), None, vec![]).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("none".parse::<TransformSpec>().unwrap(), TransformSpec::None);
        assert_eq!(
            "lda".parse::<TransformSpec>().unwrap(),
            TransformSpec::Lda { lambda: 1e-4 }
        );
        assert_eq!(
            "lda:0.5".parse::<TransformSpec>().unwrap(),
            TransformSpec::Lda { lambda: 0.5 }
        );
        assert_eq!(
            "est-l2:8".parse::<TransformSpec>().unwrap(),
            TransformSpec::EstL2 {
                est_dim: 8,
                stats_source: StatsSource::Auto
            }
        );
        assert!("est:0".parse::<TransformSpec>().is_err());
        assert!("l2:3".parse::<TransformSpec>().is_err());
        assert!("pca".parse::<TransformSpec>().is_err());
        for s in [
            "none",
            "l2",
            "center-l2",
            "var-norm",
            "lda:0.0001",
            "est:60",
            "est-l2:60",
        ] {
            assert_eq!(s.parse::<TransformSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn pipeline_none_is_identity() {
        let s = set(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0, 1]);
        let q = set(&[vec![5.0, 6.0]], &[0]);
        let out = apply_pipeline(&s, &q, TransformSpec::None, None).unwrap();
        assert_eq!(out.support, s);
        assert_eq!(out.query, q);
    }

    #[test]
    fn pipeline_est_base_without_base_is_error() {
        let s = set(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0, 1]);
        let spec = TransformSpec::Est {
            est_dim: 2,
            stats_source: StatsSource::Base,
        };
        assert!(apply_pipeline(&s, &s, spec, None).unwrap_err().is_config());
        // 1-shot with automatic source also needs the base split
        let auto = spec.with_stats_source(StatsSource::Auto);
        assert!(apply_pipeline(&s, &s, auto, None).unwrap_err().is_config());
    }

    #[test]
    fn pipeline_est_l2_full_dim_keeps_unit_rows_and_distances() {
        // unit-norm input, three rows
        let rows = [vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8], vec![0.0, 0.0, 1.0]];
        let s = set(
            &[
                rows[0].clone(),
                rows[1].clone(),
                vec![0.9, 0.1, 0.0],
                vec![0.1, 0.5, 0.9],
            ],
            &[0, 1, 0, 1],
        );
        let q = set(&rows, &[0, 1, 1]);
        let spec = TransformSpec::EstL2 {
            est_dim: 3,
            stats_source: StatsSource::Support,
        };
        let out = apply_pipeline(&s, &q, spec, None).unwrap();
        for i in 0..3 {
            let n: f64 = out.query.row_slice(i).iter().map(|v| v * v).sum();
            assert_relative_eq!(n, 1.0, epsilon = 1e-12);
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(
                    dist(out.query.row_slice(i), out.query.row_slice(j)),
                    dist(&rows[i], &rows[j]),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn incompatibility_messages() {
        assert!(TransformSpec::VarNorm
            .check_compatible(1, false)
            .unwrap_err()
            .to_string()
            .contains("k-shot >= 2"));
        assert!(TransformSpec::VarNorm.check_compatible(2, false).is_ok());
        let est: TransformSpec = "est".parse().unwrap();
        assert!(est.check_compatible(1, false).is_err());
        assert!(est.check_compatible(1, true).is_ok());
        assert!(est.check_compatible(5, false).is_ok());
    }
}
