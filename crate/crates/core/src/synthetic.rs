//! Synthetic class-conditional ensembles with known moments, and risk
//! oracles for the prototype classifier on them.
//!
//! Monte Carlo work is split in fixed blocks of [`MC_CHUNK`] trials. Block
//! `b` draws from RNG stream `(seed, b)` and blocks are merged in index order,
//! so estimates do not depend on the number of worker threads.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundInput, PairMode};
use crate::error::{Error, Result};
use crate::feature_store::{compute_ensemble_stats, ClassStats, EnsembleStats, FeatureSet};
use crate::rng::{self, cumulative, sample_cumulative, BoxMuller, StreamRng};

/// Trials per independently seeded Monte Carlo block.
pub const MC_CHUNK: usize = 4096;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
/// Largest number of outcomes [`exact_risk_discrete`] will enumerate.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// A query is misclassified against a competing prototype when its squared
/// distance to that prototype does not exceed the distance to its own class
/// prototype. Exact ties count as errors; the relative slack absorbs
/// rounding in prototypes that are equal in exact arithmetic.
pub fn counts_as_error(d_own: f64, d_other: f64) -> bool {
    d_other - d_own <= 1e-12 * (d_own + d_other)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Gaussian,
    ReluGaussian,
    Radial,
    Discrete,
}

/// Parameters of one class-conditional law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassLaw {
    /// `x = mean + L z` with `z ~ N(0, I)` and `L` lower-triangular; for
    /// `relu_gaussian` ensembles the features are `max(0, x)`.
    Gaussian { mean: Vec<f64>, cov_factor: Vec<Vec<f64>> },
    /// Gaussian with variance `sigma_par^2` along `mean` and `sigma_perp^2`
    /// in every orthogonal direction.
    Radial {
        mean: Vec<f64>,
        sigma_par: f64,
        sigma_perp: f64,
    },
    /// Finite support with point probabilities.
    Discrete { points: Vec<Vec<f64>>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnsemble {
    pub kind: EnsembleKind,
    pub dim: usize,
    pub classes: Vec<ClassLaw>,
    pub class_weights: Vec<f64>,
    /// Seed the ensemble was generated from; also seeds the Monte Carlo
    /// population statistics of `relu_gaussian` ensembles.
    #[serde(default)]
    pub seed: u64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidEnsemble(msg.into())
}

impl SyntheticEnsemble {
    pub fn new(kind: EnsembleKind, classes: Vec<ClassLaw>, class_weights: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        let dim = match classes.first() {
            Some(ClassLaw::Gaussian { mean, .. }) | Some(ClassLaw::Radial { mean, .. }) => mean.len(),
            Some(ClassLaw::Discrete { points, .. }) => points.first().map_or(0, Vec::len),
            None => return Err(invalid("ensemble has no classes")),
        };
        let n = classes.len();
        let ens = Self {
            kind,
            dim,
            classes,
            class_weights: class_weights.unwrap_or_else(|| vec![1.0 / n as f64; n]),
            seed,
        };
        ens.validate()?;
        Ok(ens)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if self.classes.is_empty() {
            return Err(invalid("ensemble has no classes"));
        }
        if self.class_weights.len() != self.classes.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} classes",
                self.class_weights.len(),
                self.classes.len()
            )));
        }
        if self.class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights("weights must be finite and >= 0".into()));
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        for (c, law) in self.classes.iter().enumerate() {
            match (self.kind, law) {
                (EnsembleKind::Gaussian | EnsembleKind::ReluGaussian, ClassLaw::Gaussian { mean, cov_factor }) => {
                    if mean.len() != d || !finite(mean) {
                        return Err(invalid(format!("class {c}: mean must have {d} finite entries")));
                    }
                    if cov_factor.len() != d || cov_factor.iter().any(|r| r.len() != d || !finite(r)) {
                        return Err(invalid(format!(
                            "class {c}: covariance factor must be a finite {d}x{d} matrix"
                        )));
                    }
                    if (0..d).any(|i| (i + 1..d).any(|j| cov_factor[i][j] != 0.0)) {
                        return Err(invalid(format!(
                            "class {c}: covariance factor must be lower-triangular"
                        )));
                    }
                }
                (
                    EnsembleKind::Radial,
                    ClassLaw::Radial {
                        mean,
                        sigma_par,
                        sigma_perp,
                    },
                ) => {
                    if mean.len() != d || !finite(mean) {
                        return Err(invalid(format!("class {c}: mean must have {d} finite entries")));
                    }
                    if !(mean.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                        return Err(invalid(format!("class {c}: radial class needs a nonzero mean")));
                    }
                    if !(*sigma_par >= 0.0 && sigma_par.is_finite() && *sigma_perp >= 0.0 && sigma_perp.is_finite()) {
                        return Err(invalid(format!("class {c}: radial scales must be finite and >= 0")));
                    }
                }
                (EnsembleKind::Discrete, ClassLaw::Discrete { points, probs }) => {
                    if points.is_empty() || points.len() != probs.len() {
                        return Err(invalid(format!("class {c}: needs one probability per point")));
                    }
                    if points.iter().any(|p| p.len() != d || !finite(p)) {
                        return Err(invalid(format!("class {c}: points must have {d} finite entries")));
                    }
                    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        return Err(invalid(format!("class {c}: probabilities must be finite and >= 0")));
                    }
                    let s: f64 = probs.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(invalid(format!("class {c}: probabilities sum to {s}, not 1")));
                    }
                }
                (kind, _) => {
                    return Err(invalid(format!(
                        "class {c}: parameters do not match ensemble kind {kind:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ens: Self = serde_json::from_str(s).map_err(|e| invalid(e.to_string()))?;
        ens.validate()?;
        Ok(ens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    fn samplers(&self) -> Vec<Sampler> {
        self.classes
            .iter()
            .map(|law| Sampler::new(law, self.kind == EnsembleKind::ReluGaussian))
            .collect()
    }
}

/// Per-class draw routine with precomputed parameters.
#[derive(Debug, Clone)]
enum Sampler {
    Gaussian {
        mean: Vec<f64>,
        factor: Vec<f64>,
        relu: bool,
    },
    Radial {
        mean: Vec<f64>,
        axis: Vec<f64>,
        par: f64,
        perp: f64,
    },
    Discrete {
        points: Vec<Vec<f64>>,
        cum: Vec<f64>,
    },
}

impl Sampler {
    fn new(law: &ClassLaw, relu: bool) -> Self {
        match law {
            ClassLaw::Gaussian { mean, cov_factor } => Sampler::Gaussian {
                mean: mean.clone(),
                factor: cov_factor.iter().flatten().copied().collect(),
                relu,
            },
            ClassLaw::Radial {
                mean,
                sigma_par,
                sigma_perp,
            } => {
                let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                Sampler::Radial {
                    mean: mean.clone(),
                    axis: mean.iter().map(|v| v / norm).collect(),
                    par: *sigma_par,
                    perp: *sigma_perp,
                }
            }
            ClassLaw::Discrete { points, probs } => Sampler::Discrete {
                points: points.clone(),
                cum: cumulative(probs),
            },
        }
    }

    fn draw(&self, rng: &mut StreamRng, bm: &mut BoxMuller, z: &mut [f64], out: &mut [f64]) {
        match self {
            Sampler::Gaussian { mean, factor, relu } => {
                bm.fill(rng, z);
                let d = mean.len();
                for i in 0..d {
                    let row = &factor[i * d..i * d + i + 1];
                    let v = mean[i] + row.iter().zip(&z[..=i]).map(|(l, z)| l * z).sum::<f64>();
                    out[i] = if *relu { v.max(0.0) } else { v };
                }
            }
            Sampler::Radial { mean, axis, par, perp } => {
                bm.fill(rng, z);
                let along: f64 = axis.iter().zip(z.iter()).map(|(u, z)| u * z).sum();
                for i in 0..mean.len() {
                    out[i] = mean[i] + perp * z[i] + (par - perp) * along * axis[i];
                }
            }
            Sampler::Discrete { points, cum } => {
                out.copy_from_slice(&points[sample_cumulative(rng, cum)]);
            }
        }
    }
}

/// Covariance `sigma_par^2 u u^T + sigma_perp^2 (I - u u^T)` with `u` the
/// unit mean direction.
pub fn radial_covariance(mean: &[f64], sigma_par: f64, sigma_perp: f64) -> DMatrix<f64> {
    let m = DVector::from_column_slice(mean);
    let u = &m / m.norm();
    let d = mean.len();
    DMatrix::identity(d, d) * sigma_perp.powi(2) + (&u * u.transpose()) * (sigma_par.powi(2) - sigma_perp.powi(2))
}

/// Streaming central moments up to order four, mergeable in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.merge(&Moments {
            n: 1,
            mean: x,
            ..Default::default()
        });
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        let d = o.mean - self.mean;
        let d2 = d * d;
        let m4 = self.m4
            + o.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * o.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * o.m3 - nb * self.m3) / n;
        let m3 = self.m3 + o.m3 + d2 * d * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * o.m2 - nb * self.m2) / n;
        let m2 = self.m2 + o.m2 + d2 * na * nb / n;
        self.mean += d * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.n += o.n;
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn stderr_mean(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// Large-sample standard error of the variance estimate,
    /// `sqrt((m4 - var^2) / n)`.
    pub fn stderr_variance(&self) -> f64 {
        let n = self.n as f64;
        let v = self.variance();
        ((self.m4 / n - v * v).max(0.0) / n).sqrt()
    }
}

/// Population statistics of an ensemble, exact or Monte Carlo.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStats {
    pub stats: EnsembleStats,
    pub norm_sq_variance: Vec<f64>,
    /// False when estimated by Monte Carlo.
    pub exact: bool,
    pub mc_samples: Option<usize>,
    /// Standard errors of `norm_sq_variance` for Monte Carlo estimates.
    pub norm_sq_variance_stderr: Option<Vec<f64>>,
}

impl PopulationStats {
    pub fn bound_input(&self, k_shot: usize, pair_mode: PairMode) -> Result<BoundInput> {
        BoundInput::new(self.stats.clone(), k_shot, self.norm_sq_variance.clone(), pair_mode)
    }
}

/// Mean vector, covariance and squared-norm moments of one class estimated
/// by sampling.
struct SampledClass {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    norm_sq: Moments,
}

impl SampledClass {
    fn merge(mut self, o: SampledClass) -> SampledClass {
        let n = self.n + o.n;
        let d = &o.mean - &self.mean;
        self.m2 += o.m2;
        self.m2.ger(self.n * o.n / n, &d, &d, 1.0);
        self.mean += d * (o.n / n);
        self.n = n;
        self.norm_sq.merge(&o.norm_sq);
        self
    }
}

fn sample_class_moments(sampler: &Sampler, dim: usize, samples: usize, seed: u64) -> SampledClass {
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<SampledClass> = (0..chunks)
        .into_par_iter()
        .map(|b| {
            let n = MC_CHUNK.min(samples - b * MC_CHUNK);
            let mut rng = rng::stream(seed, b as u64);
            let mut bm = BoxMuller::new();
            let mut z = vec![0.0; dim];
            let mut x = DMatrix::zeros(n, dim);
            let mut row = vec![0.0; dim];
            let mut norm_sq = Moments::default();
            for i in 0..n {
                sampler.draw(&mut rng, &mut bm, &mut z, &mut row);
                norm_sq.push(row.iter().map(|v| v * v).sum());
                for j in 0..dim {
                    x[(i, j)] = row[j];
                }
            }
            let mean = crate::feature_store::column_means(&x);
            for mut r in x.row_iter_mut() {
                r -= mean.transpose();
            }
            SampledClass {
                n: n as f64,
                mean,
                m2: x.transpose() * &x,
                norm_sq,
            }
        })
        .collect();
    parts
        .into_iter()
        .reduce(SampledClass::merge)
        .expect("at least one chunk")
}

pub fn population_stats(ens: &SyntheticEnsemble, mc_samples: usize) -> Result<PopulationStats> {
    ens.validate()?;
    let d = ens.dim;
    let mut per_class = Vec::with_capacity(ens.class_count());
    let mut nsv = Vec::with_capacity(ens.class_count());
    let mut nsv_err = Vec::new();
    let exact = ens.kind != EnsembleKind::ReluGaussian;
    if !exact && mc_samples < 2 {
        return Err(Error::config(
            "Monte Carlo population statistics need at least 2 samples",
        ));
    }
    let samplers = ens.samplers();
    for (c, law) in ens.classes.iter().enumerate() {
        let id = c as i64;
        match (ens.kind, law) {
            (EnsembleKind::ReluGaussian, _) => {
                let seed = rng::derive_seed(ens.seed, &format!("population-{c}"));
                let s = sample_class_moments(&samplers[c], d, mc_samples, seed);
                nsv.push(s.norm_sq.variance());
                nsv_err.push(s.norm_sq.stderr_variance());
                per_class.push(ClassStats::from_moments(id, s.mean, s.m2 / s.n, mc_samples));
            }
            (_, ClassLaw::Gaussian { mean, cov_factor }) => {
                let l = DMatrix::from_fn(d, d, |i, j| cov_factor[i][j]);
                let cov = &l * l.transpose();
                let mu = DVector::from_column_slice(mean);
                nsv.push(gaussian_norm_sq_variance(&mu, &cov));
                per_class.push(ClassStats::from_moments(id, mu, cov, 0));
            }
            (
                _,
                ClassLaw::Radial {
                    mean,
                    sigma_par,
                    sigma_perp,
                },
            ) => {
                let cov = radial_covariance(mean, *sigma_par, *sigma_perp);
                let mu = DVector::from_column_slice(mean);
                nsv.push(gaussian_norm_sq_variance(&mu, &cov));
                per_class.push(ClassStats::from_moments(id, mu, cov, 0));
            }
            (_, ClassLaw::Discrete { points, probs }) => {
                let mut mu = DVector::zeros(d);
                for (p, w) in points.iter().zip(probs) {
                    mu.axpy(*w, &DVector::from_column_slice(p), 1.0);
                }
                let mut cov = DMatrix::zeros(d, d);
                let mut sq_mean = 0.0;
                let mut sq_sq_mean = 0.0;
                for (p, w) in points.iter().zip(probs) {
                    let x = DVector::from_column_slice(p);
                    let dx = &x - &mu;
                    cov.ger(*w, &dx, &dx, 1.0);
                    let q = x.norm_squared();
                    sq_mean += w * q;
                    sq_sq_mean += w * q * q;
                }
                let var: f64 = points
                    .iter()
                    .zip(probs)
                    .map(|(p, w)| w * (p.iter().map(|v| v * v).sum::<f64>() - sq_mean).powi(2))
                    .sum();
                debug_assert!((var - (sq_sq_mean - sq_mean * sq_mean)).abs() <= 1e-9 * (1.0 + sq_sq_mean));
                nsv.push(var);
                per_class.push(ClassStats::from_moments(id, mu, cov, 0));
            }
        }
    }
    Ok(PopulationStats {
        stats: compute_ensemble_stats(per_class, &ens.class_weights)?,
        norm_sq_variance: nsv,
        exact,
        mc_samples: (!exact).then_some(mc_samples),
        norm_sq_variance_stderr: (!exact).then_some(nsv_err),
    })
}

/// `Var |x|^2 = 2 Tr(S^2) + 4 mu^T S mu` for `x ~ N(mu, S)`.
pub fn gaussian_norm_sq_variance(mu: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    2.0 * crate::linalg::trace_of_product(cov, cov) + 4.0 * (mu.transpose() * cov * mu)[(0, 0)]
}

/// Draws `rows_per_class` i.i.d. rows from every class; class `c` gets label
/// `c` and its own RNG stream.
pub fn sample_features(ens: &SyntheticEnsemble, rows_per_class: usize, seed: u64) -> Result<FeatureSet> {
    ens.validate()?;
    if rows_per_class < 1 {
        return Err(Error::config("rows per class must be >= 1"));
    }
    let d = ens.dim;
    let samplers = ens.samplers();
    let blocks: Vec<Vec<f64>> = samplers
        .par_iter()
        .enumerate()
        .map(|(c, s)| {
            let mut rng = rng::stream(seed, c as u64);
            let mut bm = BoxMuller::new();
            let mut z = vec![0.0; d];
            let mut out = vec![0.0; rows_per_class * d];
            for row in out.chunks_mut(d) {
                s.draw(&mut rng, &mut bm, &mut z, row);
            }
            out
        })
        .collect();
    let data: Vec<f64> = blocks.concat();
    let rows = ens.class_count() * rows_per_class;
    let features = DMatrix::from_row_slice(rows, d, &data);
    let labels: Vec<usize> = (0..rows).map(|r| r / rows_per_class).collect();
    FeatureSet::new(features, labels, ens.class_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditioning {
    Marginal,
    PerPair { c1: usize, c2: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub conditioning: Conditioning,
    pub k_shot: usize,
    pub pair_mode: PairMode,
    pub trials: u64,
    pub mean_alpha: f64,
    pub var_alpha: f64,
    /// Fraction of trials with `alpha <= 0` (ties count as errors).
    pub prob_alpha_negative: f64,
    pub stderr_mean: f64,
    pub stderr_var: f64,
    pub stderr_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub stderr: f64,
    pub trials: u64,
    pub method: RiskMethod,
}

impl RiskEstimate {
    pub fn monte_carlo(errors: u64, trials: u64) -> Self {
        let p = errors as f64 / trials as f64;
        Self {
            value: p,
            stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
            method: RiskMethod::MonteCarlo,
        }
    }

    pub fn exact(value: f64, outcomes: u64) -> Self {
        Self {
            value,
            stderr: 0.0,
            trials: outcomes,
            method: RiskMethod::Exact,
        }
    }
}

/// Mean of `k` fresh draws from `sampler`, written to `proto`.
fn draw_prototype(
    sampler: &Sampler,
    k: usize,
    rng: &mut StreamRng,
    bm: &mut BoxMuller,
    z: &mut [f64],
    row: &mut [f64],
    proto: &mut [f64],
) {
    proto.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..k {
        sampler.draw(rng, bm, z, row);
        for (p, x) in proto.iter_mut().zip(row.iter()) {
            *p += x;
        }
    }
    let inv = 1.0 / k as f64;
    proto.iter_mut().for_each(|v| *v *= inv);
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Draws a class pair: independent draws, resampled until distinct in
/// `Distinct` mode, so pair `(i, j)` has probability `w_i w_j / (1 - sum w^2)`.
fn draw_pair(rng: &mut StreamRng, cum: &[f64], mode: PairMode) -> (usize, usize) {
    loop {
        let a = sample_cumulative(rng, cum);
        let b = sample_cumulative(rng, cum);
        if mode == PairMode::Iid || a != b {
            return (a, b);
        }
    }
}

fn check_distinct_possible(weights: &[f64], needed: usize) -> Result<()> {
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < needed {
        return Err(Error::InsufficientClasses {
            needed,
            found: positive,
        });
    }
    Ok(())
}

#[derive(Default)]
struct AlphaBlock {
    moments: Moments,
    errors: u64,
}

fn alpha_trials(
    ens: &SyntheticEnsemble,
    k_shot: usize,
    trials: u64,
    seed: u64,
    pick: impl Fn(&mut StreamRng) -> (usize, usize) + Sync,
) -> AlphaBlock {
    let d = ens.dim;
    let samplers = ens.samplers();
    let chunks = (trials as usize).div_ceil(MC_CHUNK);
    let blocks: Vec<AlphaBlock> = (0..chunks)
        .into_par_iter()
        .map(|b| {
            let n = MC_CHUNK.min(trials as usize - b * MC_CHUNK);
            let mut rng = rng::stream(seed, b as u64);
            let mut bm = BoxMuller::new();
            let (mut z, mut row) = (vec![0.0; d], vec![0.0; d]);
            let (mut p1, mut p2, mut x) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut block = AlphaBlock::default();
            for _ in 0..n {
                let (c1, c2) = pick(&mut rng);
                draw_prototype(&samplers[c1], k_shot, &mut rng, &mut bm, &mut z, &mut row, &mut p1);
                draw_prototype(&samplers[c2], k_shot, &mut rng, &mut bm, &mut z, &mut row, &mut p2);
                samplers[c1].draw(&mut rng, &mut bm, &mut z, &mut x);
                let (d1, d2) = (sq_dist(&x, &p1), sq_dist(&x, &p2));
                block.moments.push(d2 - d1);
                block.errors += counts_as_error(d1, d2) as u64;
            }
            block
        })
        .collect();
    blocks.into_iter().fold(AlphaBlock::default(), |mut acc, b| {
        acc.moments.merge(&b.moments);
        acc.errors += b.errors;
        acc
    })
}

fn alpha_stats_from(block: AlphaBlock, conditioning: Conditioning, k_shot: usize, pair_mode: PairMode) -> AlphaStats {
    let risk = RiskEstimate::monte_carlo(block.errors, block.moments.n);
    AlphaStats {
        conditioning,
        k_shot,
        pair_mode,
        trials: block.moments.n,
        mean_alpha: block.moments.mean,
        var_alpha: block.moments.variance(),
        prob_alpha_negative: risk.value,
        stderr_mean: block.moments.stderr_mean(),
        stderr_var: block.moments.stderr_variance(),
        stderr_prob: risk.stderr,
    }
}

fn check_mc_args(ens: &SyntheticEnsemble, k_shot: usize, trials: u64) -> Result<()> {
    ens.validate()?;
    if k_shot < 1 {
        return Err(Error::config("k-shot must be >= 1"));
    }
    if trials < 1 {
        return Err(Error::config("trials must be >= 1"));
    }
    Ok(())
}

/// Monte Carlo statistics of `alpha` with class pairs drawn per `pair_mode`.
pub fn monte_carlo_alpha_stats(
    ens: &SyntheticEnsemble,
    k_shot: usize,
    pair_mode: PairMode,
    trials: u64,
    seed: u64,
) -> Result<AlphaStats> {
    check_mc_args(ens, k_shot, trials)?;
    if pair_mode == PairMode::Distinct {
        check_distinct_possible(&ens.class_weights, 2)?;
    }
    let cum = cumulative(&ens.class_weights);
    let block = alpha_trials(ens, k_shot, trials, seed, |rng| draw_pair(rng, &cum, pair_mode));
    Ok(alpha_stats_from(block, Conditioning::Marginal, k_shot, pair_mode))
}

/// Monte Carlo statistics of `alpha` for the fixed pair `(c1, c2)`.
pub fn monte_carlo_alpha_stats_pair(
    ens: &SyntheticEnsemble,
    c1: usize,
    c2: usize,
    k_shot: usize,
    trials: u64,
    seed: u64,
) -> Result<AlphaStats> {
    check_mc_args(ens, k_shot, trials)?;
    if c1 >= ens.class_count() || c2 >= ens.class_count() {
        return Err(Error::config(format!("class pair ({c1}, {c2}) out of range")));
    }
    let block = alpha_trials(ens, k_shot, trials, seed, |_| (c1, c2));
    let mode = if c1 == c2 { PairMode::Iid } else { PairMode::Distinct };
    Ok(alpha_stats_from(block, Conditioning::PerPair { c1, c2 }, k_shot, mode))
}

/// Monte Carlo N-way risk: classes are drawn by weight without replacement,
/// the first drawn class supplies the query, and the trial is an error when
/// any competing prototype is at least as close as the true one.
pub fn monte_carlo_nway_risk(
    ens: &SyntheticEnsemble,
    n_way: usize,
    k_shot: usize,
    trials: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    check_mc_args(ens, k_shot, trials)?;
    if n_way < 2 {
        return Err(Error::config(format!("n-way must be >= 2, got {n_way}")));
    }
    check_distinct_possible(&ens.class_weights, n_way)?;
    let d = ens.dim;
    let samplers = ens.samplers();
    let cum = cumulative(&ens.class_weights);
    let chunks = (trials as usize).div_ceil(MC_CHUNK);
    let errors: u64 = (0..chunks)
        .into_par_iter()
        .map(|b| {
            let n = MC_CHUNK.min(trials as usize - b * MC_CHUNK);
            let mut rng = rng::stream(seed, b as u64);
            let mut bm = BoxMuller::new();
            let (mut z, mut row, mut x) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            let mut protos = vec![vec![0.0; d]; n_way];
            let mut classes = Vec::with_capacity(n_way);
            let mut errors = 0u64;
            for _ in 0..n {
                classes.clear();
                while classes.len() < n_way {
                    let c = sample_cumulative(&mut rng, &cum);
                    if !classes.contains(&c) {
                        classes.push(c);
                    }
                }
                for (p, &c) in protos.iter_mut().zip(&classes) {
                    draw_prototype(&samplers[c], k_shot, &mut rng, &mut bm, &mut z, &mut row, p);
                }
                samplers[classes[0]].draw(&mut rng, &mut bm, &mut z, &mut x);
                let own = sq_dist(&x, &protos[0]);
                if protos[1..].iter().any(|p| counts_as_error(own, sq_dist(&x, p))) {
                    errors += 1;
                }
            }
            errors
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(RiskEstimate::monte_carlo(errors, trials))
}

/// All K-point multisets of a discrete law as (prototype, probability).
fn prototype_law(points: &[Vec<f64>], probs: &[f64], k: usize) -> Vec<(Vec<f64>, f64)> {
    fn rec(
        i: usize,
        left: usize,
        counts: &mut Vec<usize>,
        points: &[Vec<f64>],
        probs: &[f64],
        k: usize,
        out: &mut Vec<(Vec<f64>, f64)>,
    ) {
        if i == points.len() - 1 {
            counts.push(left);
            // multinomial coefficient times point probabilities
            let mut w = ln_factorial(k);
            let mut zero = false;
            for (j, &c) in counts.iter().enumerate() {
                if c > 0 {
                    if probs[j] == 0.0 {
                        zero = true;
                    } else {
                        w += c as f64 * probs[j].ln() - ln_factorial(c);
                    }
                }
            }
            if !zero {
                let d = points[0].len();
                let mut proto = vec![0.0; d];
                for (j, &c) in counts.iter().enumerate() {
                    for (p, x) in proto.iter_mut().zip(&points[j]) {
                        *p += c as f64 * x;
                    }
                }
                proto.iter_mut().for_each(|v| *v /= k as f64);
                out.push((proto, w.exp()));
            }
            counts.pop();
            return;
        }
        for c in 0..=left {
            counts.push(c);
            rec(i + 1, left - c, counts, points, probs, k, out);
            counts.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, &mut Vec::new(), points, probs, k, &mut out);
    out
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Number of K-multisets of `p` points, `C(p + k - 1, k)`.
fn multiset_count(p: usize, k: usize) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r.saturating_mul(p as u128 + i) / (i + 1);
    }
    r
}

/// Exact binary risk of a discrete ensemble by enumerating, for every class
/// pair, all support multisets of both classes and every query point.
pub fn exact_risk_discrete(ens: &SyntheticEnsemble, k_shot: usize, pair_mode: PairMode) -> Result<RiskEstimate> {
    ens.validate()?;
    if ens.kind != EnsembleKind::Discrete {
        return Err(Error::config("exact risk needs a discrete ensemble"));
    }
    if k_shot < 1 {
        return Err(Error::config("k-shot must be >= 1"));
    }
    let laws: Vec<(&[Vec<f64>], &[f64])> = ens
        .classes
        .iter()
        .map(|law| match law {
            ClassLaw::Discrete { points, probs } => (points.as_slice(), probs.as_slice()),
            _ => unreachable!("validated discrete ensemble"),
        })
        .collect();
    let pairs = crate::bounds::pair_weights(&ens.class_weights, pair_mode)?;
    let size: u128 = pairs
        .iter()
        .filter(|p| p.2 > 0.0)
        .map(|&(i, j, _)| {
            multiset_count(laws[i].0.len(), k_shot)
                .saturating_mul(multiset_count(laws[j].0.len(), k_shot))
                .saturating_mul(laws[i].0.len() as u128)
        })
        .fold(0u128, |a, b| a.saturating_add(b));
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let proto_laws: Vec<Vec<(Vec<f64>, f64)>> = laws.iter().map(|(pts, pr)| prototype_law(pts, pr, k_shot)).collect();
    let mut risk = 0.0;
    for &(i, j, w) in &pairs {
        if w == 0.0 {
            continue;
        }
        let mut pair_risk = 0.0;
        for (p1, w1) in &proto_laws[i] {
            for (p2, w2) in &proto_laws[j] {
                for (x, wx) in laws[i].0.iter().zip(laws[i].1) {
                    if counts_as_error(sq_dist(x, p1), sq_dist(x, p2)) {
                        pair_risk += w1 * w2 * wx;
                    }
                }
            }
        }
        risk += w * pair_risk;
    }
    Ok(RiskEstimate::exact(risk.clamp(0.0, 1.0), size as u64))
}

/// Parameters for random Gaussian (and ReLU-Gaussian) ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub classes: usize,
    pub dim: usize,
    /// Class means are drawn uniformly on the sphere of this radius.
    pub mean_radius: f64,
    /// Overall scale of the random covariance factors.
    pub cov_scale: f64,
    /// One covariance factor for every class instead of one per class.
    pub shared_covariance: bool,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 8,
            mean_radius: 2.0,
            cov_scale: 1.0,
            shared_covariance: false,
        }
    }
}

fn unit_vector(rng: &mut StreamRng, bm: &mut BoxMuller, d: usize) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        bm.fill(rng, &mut v);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random lower-triangular factor with positive diagonal. The per-class
/// log-normal scale makes class traces differ.
fn random_factor(rng: &mut StreamRng, bm: &mut BoxMuller, d: usize, scale: f64) -> Vec<Vec<f64>> {
    let class_scale = scale * (0.5 * bm.sample(rng)).exp();
    let off = 1.0 / (d as f64).sqrt();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| match j.cmp(&i) {
                    std::cmp::Ordering::Less => class_scale * off * bm.sample(rng),
                    std::cmp::Ordering::Equal => class_scale * (0.5 + rng.random::<f64>()),
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

fn check_shape(classes: usize, dim: usize) -> Result<()> {
    if classes < 1 {
        return Err(invalid("need at least one class"));
    }
    if dim < 1 {
        return Err(invalid("dimension must be >= 1"));
    }
    Ok(())
}

fn gaussian_like(params: &GaussianParams, seed: u64, kind: EnsembleKind) -> Result<SyntheticEnsemble> {
    check_shape(params.classes, params.dim)?;
    if !(params.mean_radius >= 0.0 && params.cov_scale > 0.0) {
        return Err(invalid("mean radius must be >= 0 and covariance scale > 0"));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, "gaussian-ensemble"), 0);
    let mut bm = BoxMuller::new();
    let d = params.dim;
    let shared = random_factor(&mut rng, &mut bm, d, params.cov_scale);
    let classes = (0..params.classes)
        .map(|_| {
            let mean = unit_vector(&mut rng, &mut bm, d)
                .into_iter()
                .map(|v| v * params.mean_radius)
                .collect();
            let cov_factor = if params.shared_covariance {
                shared.clone()
            } else {
                random_factor(&mut rng, &mut bm, d, params.cov_scale)
            };
            ClassLaw::Gaussian { mean, cov_factor }
        })
        .collect();
    SyntheticEnsemble::new(kind, classes, None, seed)
}

pub fn make_gaussian_ensemble(params: &GaussianParams, seed: u64) -> Result<SyntheticEnsemble> {
    gaussian_like(params, seed, EnsembleKind::Gaussian)
}

pub fn make_relu_ensemble(params: &GaussianParams, seed: u64) -> Result<SyntheticEnsemble> {
    gaussian_like(params, seed, EnsembleKind::ReluGaussian)
}

/// Parameters for random radial ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialParams {
    pub classes: usize,
    pub dim: usize,
    /// Norm of every class mean.
    pub mean_norm: f64,
    pub sigma_par: f64,
    pub sigma_perp: f64,
    /// When set, class directions are `normalize(u + spread * g_c)` around a
    /// shared random axis `u`; otherwise uniform on the sphere.
    pub cone_spread: Option<f64>,
}

impl Default for RadialParams {
    fn default() -> Self {
        Self {
            classes: 5,
            dim: 16,
            mean_norm: 6.0,
            sigma_par: 2.0,
            sigma_perp: 0.2,
            cone_spread: None,
        }
    }
}

pub fn make_radial_ensemble(params: &RadialParams, seed: u64) -> Result<SyntheticEnsemble> {
    check_shape(params.classes, params.dim)?;
    if !(params.mean_norm > 0.0) {
        return Err(invalid("radial classes need a positive mean norm"));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, "radial-ensemble"), 0);
    let mut bm = BoxMuller::new();
    let d = params.dim;
    let axis = unit_vector(&mut rng, &mut bm, d);
    let classes = (0..params.classes)
        .map(|_| {
            let dir = match params.cone_spread {
                None => unit_vector(&mut rng, &mut bm, d),
                Some(s) => {
                    let g = unit_vector(&mut rng, &mut bm, d);
                    let v: Vec<f64> = axis.iter().zip(&g).map(|(a, g)| a + s * g).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                }
            };
            ClassLaw::Radial {
                mean: dir.into_iter().map(|v| v * params.mean_norm).collect(),
                sigma_par: params.sigma_par,
                sigma_perp: params.sigma_perp,
            }
        })
        .collect();
    SyntheticEnsemble::new(EnsembleKind::Radial, classes, None, seed)
}

/// Discrete ensemble from `(points, probabilities)` per class.
pub fn make_discrete_ensemble(
    classes: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    class_weights: Option<Vec<f64>>,
) -> Result<SyntheticEnsemble> {
    let laws = classes
        .into_iter()
        .map(|(points, probs)| ClassLaw::Discrete { points, probs })
        .collect();
    SyntheticEnsemble::new(EnsembleKind::Discrete, laws, class_weights, 0)
}
