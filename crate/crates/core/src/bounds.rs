//! Chebyshev-type upper bounds on the prototype classifier's risk.
//!
//! With `alpha = |x - p2|^2 - |x - p1|^2` for a query `x` of class `c1`,
//! prototype `p1` of its own class and `p2` of another class, the one-sided
//! Chebyshev inequality gives `P(alpha <= 0) <= 1 - E[alpha]^2 / E[alpha^2]`.
//! The bounds below replace `E[alpha^2]` by an upper estimate built from
//! four moment terms:
//!
//! * norm variance: `(4/K) E_c Var_{x~c} |x|^2`
//! * trace variance: `(4/K + 2/K^2) Var_c Tr(S_c)`
//! * within: `(8/K) Tr(S_w)(Tr(S_w) + Tr(S_b) + |mu|^2) + 4 (Tr(S_b) + |mu|^2)^2`
//! * mean distance: `E_{c1,c2} |mu_c1 - mu_c2|^4`
//!
//! where `S_c` is a class covariance, `S_w` their weighted mean, `S_b` the
//! covariance of the class means and `mu` the grand mean. The numerator is
//! `E[alpha]^2 = 4 Tr(S_b)^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::feature_store::{
    compute_class_stats, compute_ensemble_stats, ensemble_stats_from_features, norm_sq_variance_per_class,
    uniform_weights, Divisor, EnsembleStats, FeatureSet,
};
use crate::linalg::{top_eigenvector, trace_of_product};

/// How the class pair `(c1, c2)` is drawn from the class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Independent draws; `c1 == c2` is possible.
    #[default]
    Iid,
    /// Independent draws conditioned on `c1 != c2`.
    Distinct,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PairMode::Iid),
            "distinct" => Ok(PairMode::Distinct),
            other => Err(Error::config(format!(
                "unknown pair mode '{other}' (expected iid or distinct)"
            ))),
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairMode::Iid => "iid",
            PairMode::Distinct => "distinct",
        })
    }
}

/// Ordered class pairs with their probabilities under `mode`.
pub fn pair_weights(weights: &[f64], mode: PairMode) -> Result<Vec<(usize, usize, f64)>> {
    let n = weights.len();
    let mut pairs = Vec::with_capacity(n * n);
    match mode {
        PairMode::Iid => {
            for i in 0..n {
                for j in 0..n {
                    pairs.push((i, j, weights[i] * weights[j]));
                }
            }
        }
        PairMode::Distinct => {
            let same: f64 = weights.iter().map(|w| w * w).sum();
            let norm = 1.0 - same;
            if n < 2 || !(norm > 0.0) {
                return Err(Error::InsufficientClasses { needed: 2, found: n });
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        pairs.push((i, j, weights[i] * weights[j] / norm));
                    }
                }
            }
        }
    }
    Ok(pairs)
}

/// A bound that is `undefined` when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundValue {
    Value(f64),
    Undefined,
}

impl BoundValue {
    pub fn value(self) -> Option<f64> {
        match self {
            BoundValue::Value(v) => Some(v),
            BoundValue::Undefined => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        self == BoundValue::Undefined
    }
}

impl fmt::Display for BoundValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundValue::Value(v) => write!(f, "{v}"),
            BoundValue::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for BoundValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BoundValue::Value(v) => s.serialize_f64(*v),
            BoundValue::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for BoundValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(BoundValue::Value(v)),
            Repr::Str(s) if s == "undefined" => Ok(BoundValue::Undefined),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid bound value '{s}'"))),
        }
    }
}

/// `1 - numerator / denominator`, undefined for a zero denominator.
fn one_minus_ratio(numerator: f64, denominator: f64) -> BoundValue {
    if denominator == 0.0 {
        BoundValue::Undefined
    } else {
        BoundValue::Value(1.0 - numerator / denominator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInput {
    pub stats: EnsembleStats,
    pub k_shot: usize,
    /// `Var_{x~c} |x|^2` per class.
    pub norm_sq_variance_per_class: Vec<f64>,
    pub pair_mode: PairMode,
}

impl BoundInput {
    pub fn new(
        stats: EnsembleStats,
        k_shot: usize,
        norm_sq_variance_per_class: Vec<f64>,
        pair_mode: PairMode,
    ) -> Result<Self> {
        if k_shot < 1 {
            return Err(Error::config("k-shot must be >= 1"));
        }
        if norm_sq_variance_per_class.len() != stats.class_count() {
            return Err(Error::DimensionMismatch {
                expected: stats.class_count(),
                found: norm_sq_variance_per_class.len(),
            });
        }
        if norm_sq_variance_per_class
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::Degenerate("norm variances must be finite and >= 0".into()));
        }
        Ok(Self {
            stats,
            k_shot,
            norm_sq_variance_per_class,
            pair_mode,
        })
    }

    /// Sample statistics of a feature set under uniform class weights.
    pub fn from_features(fs: &FeatureSet, k_shot: usize, pair_mode: PairMode, divisor: Divisor) -> Result<Self> {
        let stats = ensemble_stats_from_features(fs, divisor)?;
        let nsv = norm_sq_variance_per_class(fs, divisor)?;
        Self::new(stats, k_shot, nsv, pair_mode)
    }

    fn k(&self) -> f64 {
        self.k_shot as f64
    }
}

pub fn norm_variance_term(input: &BoundInput) -> f64 {
    let weighted: f64 = input
        .stats
        .class_weights
        .iter()
        .zip(&input.norm_sq_variance_per_class)
        .map(|(w, v)| w * v)
        .sum();
    4.0 / input.k() * weighted
}

pub fn trace_variance_term(input: &BoundInput) -> f64 {
    let k = input.k();
    (4.0 / k + 2.0 / (k * k)) * input.stats.var_trace_within
}

pub fn within_variance_term(input: &BoundInput) -> f64 {
    let s = &input.stats;
    let tw = s.trace_within;
    let outer = s.trace_between + s.mu_sq_norm;
    8.0 / input.k() * tw * (tw + outer) + 4.0 * outer * outer
}

/// `E |mu_c1 - mu_c2|^4` over class pairs drawn per `mode`.
pub fn mean_distance_term_of(stats: &EnsembleStats, mode: PairMode) -> Result<f64> {
    let pairs = pair_weights(&stats.class_weights, mode)?;
    Ok(pairs
        .into_iter()
        .map(|(i, j, w)| {
            let d2 = (&stats.per_class[i].mean - &stats.per_class[j].mean).norm_squared();
            w * d2 * d2
        })
        .sum())
}

pub fn mean_distance_term(input: &BoundInput) -> Result<f64> {
    mean_distance_term_of(&input.stats, input.pair_mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub term_norm_variance: f64,
    pub term_trace_variance: f64,
    pub term_within: f64,
    pub term_mean_dist: f64,
    /// `4 Tr(S_b)^2`.
    pub trace_between_sq: f64,
    pub bound_value: BoundValue,
    pub k_shot: usize,
    pub pair_mode: PairMode,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "k_shot,pair_mode,term_norm_variance,term_trace_variance,term_within,term_mean_dist,trace_between_sq,bound";

    pub fn denominator(&self) -> f64 {
        self.term_norm_variance + self.term_trace_variance + self.term_within + self.term_mean_dist
    }

    /// `4 Tr(S_b)^2 / denominator`: the lower bound on the probability of a
    /// correct binary decision.
    pub fn fraction(&self) -> Option<f64> {
        let d = self.denominator();
        (d != 0.0).then(|| self.trace_between_sq / d)
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.k_shot,
            self.pair_mode,
            self.term_norm_variance,
            self.term_trace_variance,
            self.term_within,
            self.term_mean_dist,
            self.trace_between_sq,
            self.bound_value
        )
    }
}

/// Binary-classification bound from the four moment terms.
pub fn theorem1_bound(input: &BoundInput) -> Result<BoundReport> {
    let term_norm_variance = norm_variance_term(input);
    let term_trace_variance = trace_variance_term(input);
    let term_within = within_variance_term(input);
    let term_mean_dist = mean_distance_term(input)?;
    let tb = input.stats.trace_between;
    let trace_between_sq = 4.0 * tb * tb;
    let denominator = term_norm_variance + term_trace_variance + term_within + term_mean_dist;
    Ok(BoundReport {
        term_norm_variance,
        term_trace_variance,
        term_within,
        term_mean_dist,
        trace_between_sq,
        bound_value: one_minus_ratio(trace_between_sq, denominator),
        k_shot: input.k_shot,
        pair_mode: input.pair_mode,
    })
}

/// Smallest `E[alpha^2]` upper estimate, i.e. the bound's denominator, minus
/// `E[alpha]^2 = 4 Tr(S_b)^2`: an upper bound on `Var[alpha]` for i.i.d.
/// class pairs.
pub fn alpha_variance_bound(input: &BoundInput) -> Result<f64> {
    let r = theorem1_bound(input)?;
    Ok(r.denominator() - r.trace_between_sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub bound_value: BoundValue,
    pub trace_between_sq: f64,
    pub denominator: f64,
    pub term_mean_dist: f64,
    /// `max_c |S_c - S_w|_F`: how far the ensemble is from a shared
    /// covariance.
    pub max_covariance_deviation: f64,
    pub k_shot: usize,
    pub pair_mode: PairMode,
}

/// Bound for ensembles whose classes share one covariance, taken here as
/// the pooled within-class covariance.
pub fn theorem2_bound(stats: &EnsembleStats, k_shot: usize, pair_mode: PairMode) -> Result<Theorem2Report> {
    if k_shot < 1 {
        return Err(Error::config("k-shot must be >= 1"));
    }
    let g = 1.0 + 1.0 / k_shot as f64;
    let sw = &stats.mean_within_cov;
    let term_mean_dist = mean_distance_term_of(stats, pair_mode)?;
    let denominator =
        8.0 * g * g * trace_of_product(sw, sw) + 16.0 * g * trace_of_product(&stats.between_cov, sw) + term_mean_dist;
    let tb = stats.trace_between;
    let trace_between_sq = 4.0 * tb * tb;
    let max_covariance_deviation = stats
        .per_class
        .iter()
        .map(|c| (&c.covariance - sw).norm())
        .fold(0.0, f64::max);
    Ok(Theorem2Report {
        bound_value: one_minus_ratio(trace_between_sq, denominator),
        trace_between_sq,
        denominator,
        term_mean_dist,
        max_covariance_deviation,
        k_shot,
        pair_mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Report {
    pub n_way: usize,
    pub bound_value: BoundValue,
    /// Sum over the `N - 1` wrong classes of the binary fractions.
    pub fraction_sum: f64,
    pub binary: BoundReport,
}

/// N-way bound `(N - 1) - sum_{c != y} fraction` with every binary fraction
/// taken from the ensemble-level statistics.
pub fn theorem3_bound(input: &BoundInput, n_way: usize) -> Result<Theorem3Report> {
    if n_way < 2 {
        return Err(Error::config(format!("n-way must be >= 2, got {n_way}")));
    }
    let binary = theorem1_bound(input)?;
    let (bound_value, fraction_sum) = match binary.fraction() {
        None => (BoundValue::Undefined, f64::NAN),
        Some(frac) => {
            let sum: f64 = (0..n_way - 1).map(|_| frac).sum();
            (BoundValue::Value((n_way - 1) as f64 - sum), sum)
        }
    };
    Ok(Theorem3Report {
        n_way,
        bound_value,
        fraction_sum: if fraction_sum.is_nan() { 0.0 } else { fraction_sum },
        binary,
    })
}

/// Binary fraction computed on the two-class sub-ensemble `{a, b}` with
/// equal weights.
pub fn pair_fraction(input: &BoundInput, a: usize, b: usize) -> Result<Option<f64>> {
    let stats = compute_ensemble_stats(
        vec![input.stats.per_class[a].clone(), input.stats.per_class[b].clone()],
        &uniform_weights(2),
    )?;
    let nsv = vec![input.norm_sq_variance_per_class[a], input.norm_sq_variance_per_class[b]];
    let sub = BoundInput::new(stats, input.k_shot, nsv, input.pair_mode)?;
    Ok(theorem1_bound(&sub)?.fraction())
}

/// N-way bound over the given episode classes using per-pair statistics,
/// averaged over the query class.
pub fn theorem3_bound_per_pair(input: &BoundInput, classes: &[usize]) -> Result<BoundValue> {
    let n = classes.len();
    if n < 2 {
        return Err(Error::config(format!("n-way must be >= 2, got {n}")));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= input.stats.class_count()) {
        return Err(Error::config(format!("class index {c} out of range")));
    }
    let mut total = 0.0;
    for &y in classes {
        for &c in classes {
            if c == y {
                continue;
            }
            match pair_fraction(input, y, c)? {
                Some(f) => total += f,
                None => return Ok(BoundValue::Undefined),
            }
        }
    }
    Ok(BoundValue::Value((n - 1) as f64 - total / n as f64))
}

/// `E[alpha | c1, c2] = (Tr S_c2 - Tr S_c1) / K + |mu_c1 - mu_c2|^2`.
pub fn alpha_expectation(stats: &EnsembleStats, c1: usize, c2: usize, k_shot: usize) -> f64 {
    let (a, b) = (&stats.per_class[c1], &stats.per_class[c2]);
    (b.trace_cov - a.trace_cov) / k_shot as f64 + (&a.mean - &b.mean).norm_squared()
}

/// `E[alpha]` over i.i.d. class pairs, which is `2 Tr(S_b)`.
pub fn alpha_expectation_marginal(stats: &EnsembleStats) -> f64 {
    2.0 * stats.trace_between
}

/// `E[alpha]` averaged over pairs drawn per `mode`.
pub fn alpha_expectation_pairs(stats: &EnsembleStats, k_shot: usize, mode: PairMode) -> Result<f64> {
    Ok(pair_weights(&stats.class_weights, mode)?
        .into_iter()
        .map(|(i, j, w)| w * alpha_expectation(stats, i, j, k_shot))
        .sum())
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins on `[0, 1]`; 1.0 falls in the last bin.
    pub fn unit(values: &[f64], bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCosine {
    pub class_id: i64,
    /// `|cos|` between the class mean and the top eigenvector of its own
    /// covariance.
    pub cos_with_within_top_eigvec: f64,
    /// `|cos|` between the class mean and the top eigenvector of the
    /// between-class covariance.
    pub cos_with_between_top_eigvec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenAnalysis {
    pub centered: bool,
    pub records: Vec<EigenCosine>,
    pub within_histogram: Histogram,
    pub between_histogram: Histogram,
    pub warnings: Vec<String>,
}

impl EigenAnalysis {
    pub fn mean_within(&self) -> f64 {
        mean(self.records.iter().map(|r| r.cos_with_within_top_eigvec))
    }

    pub fn mean_between(&self) -> f64 {
        mean(self.records.iter().map(|r| r.cos_with_between_top_eigvec))
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("class_id,cos_within,cos_between\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.class_id, r.cos_with_within_top_eigvec, r.cos_with_between_top_eigvec
            ));
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0)
}

/// Alignment of each class mean (or of `mu_c - mu` when `centered`) with the
/// top eigenvectors of its class covariance and of the between-class
/// covariance. Classes with fewer than two rows or a zero mean are skipped
/// with a warning.
pub fn eigen_cosine_analysis(fs: &FeatureSet, centered: bool) -> Result<EigenAnalysis> {
    let mut warnings = Vec::new();
    let kept: Vec<usize> = (0..fs.class_count())
        .filter(|&c| {
            let ok = fs.rows_of_class(c).len() >= 2;
            if !ok {
                warnings.push(format!("class {} has fewer than 2 rows; skipped", fs.class_id(c)));
            }
            ok
        })
        .collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientClasses {
            needed: 2,
            found: kept.len(),
        });
    }
    let groups: Vec<&[usize]> = kept.iter().map(|&c| fs.rows_of_class(c)).collect();
    let sub = fs.select_groups(&groups)?;
    let per_class = compute_class_stats(&sub, Divisor::Population)?;
    let n = per_class.len();
    let stats = compute_ensemble_stats(per_class, &uniform_weights(n))?;
    let between_top = top_eigenvector(&stats.between_cov)?;

    let mut records = Vec::new();
    for s in &stats.per_class {
        let m = if centered {
            &s.mean - &stats.grand_mean
        } else {
            s.mean.clone()
        };
        if m.norm() == 0.0 {
            warnings.push(format!("class {} has a zero mean vector; skipped", s.class_id));
            log::warn!("class {} has a zero mean vector; skipped", s.class_id);
            continue;
        }
        let within_top = top_eigenvector(&s.covariance)?;
        records.push(EigenCosine {
            class_id: s.class_id,
            cos_with_within_top_eigvec: abs_cos(&m, &within_top),
            cos_with_between_top_eigvec: abs_cos(&m, &between_top),
        });
    }
    let w: Vec<f64> = records.iter().map(|r| r.cos_with_within_top_eigvec).collect();
    let b: Vec<f64> = records.iter().map(|r| r.cos_with_between_top_eigvec).collect();
    Ok(EigenAnalysis {
        centered,
        within_histogram: Histogram::unit(&w, HISTOGRAM_BINS),
        between_histogram: Histogram::unit(&b, HISTOGRAM_BINS),
        records,
        warnings,
    })
}

/// The norm-variance, trace-variance and within terms divided by
/// `Tr(S_b)^2`, with the within/between trace ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermTable {
    pub norm_variance: f64,
    pub trace_variance: f64,
    pub within: f64,
    /// `Tr(S_w) / Tr(S_b)`.
    pub within_between_ratio: f64,
    /// Extra factor applied so that `within == 1`, when requested.
    pub rescale: Option<f64>,
}

impl TermTable {
    pub const CSV_HEADER: &'static str = "norm_variance,trace_variance,within,within_between_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.norm_variance, self.trace_variance, self.within, self.within_between_ratio
        )
    }
}

pub fn bound_term_report(input: &BoundInput, rescale_within: bool) -> Result<TermTable> {
    let tb = input.stats.trace_between;
    if !(tb > 0.0) {
        return Err(Error::Degenerate(
            "between-class covariance has zero trace; terms cannot be normalized".into(),
        ));
    }
    let t2 = tb * tb;
    let mut table = TermTable {
        norm_variance: norm_variance_term(input) / t2,
        trace_variance: trace_variance_term(input) / t2,
        within: within_variance_term(input) / t2,
        within_between_ratio: input.stats.trace_within / tb,
        rescale: None,
    };
    if rescale_within {
        let s = 1.0 / table.within;
        table.norm_variance *= s;
        table.trace_variance *= s;
        table.within = 1.0;
        table.rescale = Some(s);
    }
    Ok(table)
}
