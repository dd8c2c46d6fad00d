//! Episodic N-way K-shot evaluation.
//!
//! Episode `e` draws from RNG stream `(seed, e)`, and episodes are collected
//! in index order, so a report is bit-identical for any thread count.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{build_prototypes, predict_all, DistanceMode};
use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::rng;
use crate::transforms::{estimate_class_variances, PreparedTransform, TransformSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
    pub transform: TransformSpec,
    pub distance_mode: DistanceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            queries_per_class: 16,
            episodes: 600,
            seed: 0,
            transform: TransformSpec::None,
            distance_mode: DistanceMode::Euclidean,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::config(format!("n-way must be >= 2, got {}", self.n_way)));
        }
        if self.k_shot < 1 {
            return Err(Error::config("k-shot must be >= 1"));
        }
        if self.queries_per_class < 1 {
            return Err(Error::config("queries per class must be >= 1"));
        }
        if self.episodes < 1 {
            return Err(Error::config("episodes must be >= 1"));
        }
        if self.distance_mode == DistanceMode::Varnorm && self.k_shot < 2 {
            return Err(Error::config(
                "varnorm distance requires k-shot >= 2: per-class sample variances are undefined with one support row",
            ));
        }
        Ok(())
    }

    /// Variance-normalized scoring is used by the var-norm transform or when
    /// requested explicitly.
    fn uses_varnorm(&self) -> bool {
        self.distance_mode == DistanceMode::Varnorm || self.transform == TransformSpec::VarNorm
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    /// Original ids of the sampled classes, in sampling order.
    pub class_ids: Vec<i64>,
    /// Support row indices per class.
    pub support_indices: Vec<Vec<usize>>,
    /// Query row indices per class.
    pub query_indices: Vec<Vec<usize>>,
}

/// Samples classes uniformly without replacement, then `k_shot + queries`
/// rows per class without replacement; the first `k_shot` form the support.
pub fn sample_episode<R: Rng + ?Sized>(
    fs: &FeatureSet,
    n_way: usize,
    k_shot: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if fs.class_count() < n_way {
        return Err(Error::InsufficientClasses {
            needed: n_way,
            found: fs.class_count(),
        });
    }
    let needed = k_shot + queries;
    let classes = index::sample(rng, fs.class_count(), n_way).into_vec();
    let mut episode = Episode {
        class_ids: Vec::with_capacity(n_way),
        support_indices: Vec::with_capacity(n_way),
        query_indices: Vec::with_capacity(n_way),
    };
    for c in classes {
        let rows = fs.rows_of_class(c);
        if rows.len() < needed {
            return Err(Error::InsufficientRows {
                class: fs.class_id(c),
                found: rows.len(),
                needed,
            });
        }
        let picked: Vec<usize> = index::sample(rng, rows.len(), needed)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        episode.class_ids.push(fs.class_id(c));
        episode.support_indices.push(picked[..k_shot].to_vec());
        episode.query_indices.push(picked[k_shot..].to_vec());
    }
    Ok(episode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub correct: usize,
    pub total: usize,
    pub output_dim: usize,
    pub predictions: Vec<i64>,
    pub truth: Vec<i64>,
    pub warnings: Vec<String>,
}

impl EpisodeOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

pub fn run_episode(
    fs: &FeatureSet,
    episode: &Episode,
    transform: &PreparedTransform,
    cfg: &EvalConfig,
) -> Result<EpisodeOutcome> {
    fn groups(idx: &[Vec<usize>]) -> Vec<&[usize]> {
        idx.iter().map(Vec::as_slice).collect()
    }
    let support = fs.select_groups(&groups(&episode.support_indices))?;
    let query = fs.select_groups(&groups(&episode.query_indices))?;
    let t = transform.apply(&support, &query)?;
    let variances = if cfg.uses_varnorm() {
        Some(match t.class_variances {
            Some(v) => v,
            None => estimate_class_variances(&t.support)?,
        })
    } else {
        None
    };
    let mode = if cfg.uses_varnorm() {
        DistanceMode::Varnorm
    } else {
        DistanceMode::Euclidean
    };
    let protos = build_prototypes(&t.support, variances.as_deref())?;
    let predictions = predict_all(&t.query, &protos, mode)?;
    let truth: Vec<i64> = t.query.labels().iter().map(|&l| t.query.class_id(l)).collect();
    let correct = predictions.iter().zip(&truth).filter(|(p, y)| p == y).count();
    Ok(EpisodeOutcome {
        correct,
        total: truth.len(),
        output_dim: t.support.dim(),
        predictions,
        truth,
        warnings: t.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMeta {
    pub name: String,
    /// Dimension of the transformed features.
    pub fitted_dim: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: f64,
    pub per_episode_accuracies: Vec<f64>,
    pub transform: TransformMeta,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "transform,n_way,k_shot,episodes,mean_accuracy,ci95";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.config.transform,
            self.config.n_way,
            self.config.k_shot,
            self.config.episodes,
            self.mean_accuracy,
            self.ci95_halfwidth
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Mean and normal-approximation 95% half-width (population standard
/// deviation of the per-episode values).
pub fn mean_and_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

pub fn run_evaluation(fs: &FeatureSet, base: Option<&FeatureSet>, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    cfg.transform.check_compatible(cfg.k_shot, base.is_some())?;
    if fs.class_count() < cfg.n_way {
        return Err(Error::InsufficientClasses {
            needed: cfg.n_way,
            found: fs.class_count(),
        });
    }
    // every class must be able to fill an episode, so failures do not depend
    // on which classes the seed happens to draw
    let needed = cfg.k_shot + cfg.queries_per_class;
    if let Some(c) = (0..fs.class_count()).find(|&c| fs.rows_of_class(c).len() < needed) {
        return Err(Error::InsufficientRows {
            class: fs.class_id(c),
            found: fs.rows_of_class(c).len(),
            needed,
        });
    }
    if let Some(b) = base {
        if b.dim() != fs.dim() {
            return Err(Error::DimensionMismatch {
                expected: fs.dim(),
                found: b.dim(),
            });
        }
    }
    let prepared = PreparedTransform::new(cfg.transform, base)?;

    let outcomes: Vec<Result<EpisodeOutcome>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = rng::stream(cfg.seed, e as u64);
            let episode = sample_episode(fs, cfg.n_way, cfg.k_shot, cfg.queries_per_class, &mut rng)?;
            run_episode(fs, &episode, &prepared, cfg)
        })
        .collect();

    let mut accuracies = Vec::with_capacity(cfg.episodes);
    let mut warnings = BTreeSet::new();
    let mut fitted_dim = fs.dim();
    for (e, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome.map_err(|source| Error::Episode {
            episode: e,
            source: Box::new(source),
        })?;
        if e == 0 {
            fitted_dim = outcome.output_dim;
        }
        accuracies.push(outcome.accuracy());
        warnings.extend(outcome.warnings);
    }
    warnings.extend(prepared.warnings().iter().cloned());
    let (mean_accuracy, ci95_halfwidth) = mean_and_ci95(&accuracies);
    Ok(EvalReport {
        config: cfg.clone(),
        mean_accuracy,
        ci95_halfwidth,
        per_episode_accuracies: accuracies,
        transform: TransformMeta {
            name: cfg.transform.to_string(),
            fitted_dim,
            warnings: warnings.into_iter().collect(),
        },
    })
}
