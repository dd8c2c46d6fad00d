use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "protoscope",
    version,
    about = "Few-shot prototype classifier evaluation and risk bounds"
)]
pub struct Cli {
    /// Record wall-clock duration in the run manifest (makes reports
    /// differ between otherwise identical runs).
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Episodic evaluation of a feature file.
    Eval(EvalArgs),
    /// Bound terms and bound value for a feature file or ensemble spec.
    Bound(BoundArgs),
    /// Generate a synthetic ensemble and sample a feature file from it.
    Synth(SynthArgs),
    /// Check a bound against Monte Carlo (and exact) risk on an ensemble.
    Verify(VerifyArgs),
    /// Cosines between class means and top covariance eigenvectors.
    Eigen(EigenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Varnorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Auto,
    Support,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairs {
    Iid,
    Distinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Gaussian,
    #[value(alias = "relu_gaussian")]
    ReluGaussian,
    Radial,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Feature file (.csv, or PFV1 binary otherwise).
    #[arg(long)]
    pub features: PathBuf,
    /// none | l2 | center-l2 | var-norm | lda[:lambda] | est[:dim] | est-l2[:dim]
    #[arg(long, default_value = "none")]
    pub transform: String,
    #[arg(long, default_value_t = 5)]
    pub n_way: usize,
    #[arg(long)]
    pub k_shot: usize,
    /// Queries per class.
    #[arg(long, default_value_t = 16)]
    pub queries: usize,
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// LDA ridge, used when --transform has no explicit parameter.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    /// EST target dimension, used when --transform has no explicit parameter.
    #[arg(long, default_value_t = 60)]
    pub est_dim: usize,
    /// Where center-l2 / EST statistics come from.
    #[arg(long, value_enum, default_value_t = Source::Auto)]
    pub stats_source: Source,
    /// Base-split features for statistics fitted outside the episode.
    #[arg(long)]
    pub base_features: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Distance::Euclidean)]
    pub distance: Distance,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundArgs {
    #[arg(long, conflicts_with = "ensemble", required_unless_present = "ensemble")]
    pub features: Option<PathBuf>,
    /// Ensemble spec JSON; population statistics are used.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub k_shot: usize,
    #[arg(long, value_enum, default_value_t = Pairs::Iid)]
    pub pair_mode: Pairs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub theorem: u8,
    /// Number of ways; theorem 3 only.
    #[arg(long)]
    pub n_way: Option<usize>,
    /// Theorem 3 from the binary bounds of each class pair among these
    /// class ids, instead of the ensemble-level statistics.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<i64>>,
    /// Also emit the terms divided by Tr(S_b)^2 and rescaled so the
    /// within-class term is 1.
    #[arg(long = "normalize-terms", alias = "normalize-fig2")]
    pub normalize_terms: bool,
    /// Covariance divisor for statistics of a feature file.
    #[arg(long, value_enum, default_value_t = Covariance::Population)]
    pub covariance: Covariance,
    /// Monte Carlo samples per class for ensembles without closed-form moments.
    #[arg(long, default_value_t = protoscope::synthetic::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub rows_per_class: usize,
    /// Feature file to write (.csv, or PFV1 binary otherwise).
    #[arg(long)]
    pub out: PathBuf,
    /// Ensemble spec to write; defaults to the feature path with a .json
    /// extension.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
    /// gaussian / relu_gaussian: radius of the class-mean sphere.
    #[arg(long, default_value_t = 2.0)]
    pub mean_radius: f64,
    /// gaussian / relu_gaussian: covariance scale.
    #[arg(long, default_value_t = 1.0)]
    pub cov_scale: f64,
    /// gaussian / relu_gaussian: one covariance for every class.
    #[arg(long)]
    pub shared_covariance: bool,
    /// radial: norm of every class mean.
    #[arg(long, default_value_t = 3.0)]
    pub mean_norm: f64,
    /// radial: standard deviation along the mean direction.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_par: f64,
    /// radial: standard deviation orthogonal to the mean direction.
    #[arg(long, default_value_t = 0.1)]
    pub sigma_perp: f64,
    /// radial: spread of class directions around a shared axis; uniform
    /// directions when omitted.
    #[arg(long)]
    pub cone_spread: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub k_shot: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub theorem: u8,
    /// Number of ways; theorem 3 only.
    #[arg(long)]
    pub n_way: Option<usize>,
    /// Defaults to iid for theorems 1 and 2 and distinct for theorem 3.
    #[arg(long, value_enum)]
    pub pair_mode: Option<Pairs>,
    #[arg(long, default_value_t = protoscope::synthetic::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EigenArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Histogram CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-class cosine CSV to write.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Use mu_c - mu instead of mu_c.
    #[arg(long)]
    pub centered: bool,
}
