use std::io::Write;
use std::path::{Path, PathBuf};

use protoscope::bounds::{
    bound_term_report, eigen_cosine_analysis, theorem1_bound, theorem2_bound, theorem3_bound, theorem3_bound_per_pair,
    BoundInput, BoundReport, BoundValue, PairMode, TermTable, Theorem2Report, Theorem3Report,
};
use protoscope::classifier::DistanceMode;
use protoscope::evaluator::{run_evaluation, EvalConfig, EvalReport};
use protoscope::feature_store::{load_features, save_features};
use protoscope::rng::derive_seed;
use protoscope::synthetic::{
    exact_risk_discrete, make_gaussian_ensemble, make_radial_ensemble, make_relu_ensemble, monte_carlo_alpha_stats,
    monte_carlo_nway_risk, population_stats, sample_features, AlphaStats, EnsembleKind, GaussianParams, RadialParams,
    RiskEstimate, SyntheticEnsemble,
};
use protoscope::transforms::{StatsSource, TransformSpec};
use protoscope::{Divisor, FeatureSet, FileFormat};
use serde::Serialize;

use crate::args::{
    BoundArgs, Covariance, Distance, EigenArgs, EvalArgs, Kind, OutputFormat, Pairs, Source, SynthArgs, VerifyArgs,
};
use crate::manifest::RunManifest;
use crate::CliError;

/// Exit code of a verification that ran but failed.
pub const EXIT_VERIFY_FAIL: i32 = 4;

/// Verification PASS margin in Monte Carlo standard errors.
const PASS_MARGIN_STDERR: f64 = 3.0;

fn load(path: &Path) -> Result<FeatureSet, CliError> {
    load_features(path, FileFormat::from_path(path)).map_err(CliError::from)
}

fn load_ensemble(path: &Path) -> Result<SyntheticEnsemble, CliError> {
    // a bad spec file is a usage problem, not a data problem
    SyntheticEnsemble::load(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn pair_mode(p: Pairs) -> PairMode {
    match p {
        Pairs::Iid => PairMode::Iid,
        Pairs::Distinct => PairMode::Distinct,
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::data(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::data(format!("stdout: {e}"))),
    }
}

/// Applies `--lambda`, `--est-dim` and `--stats-source` to a transform name
/// given without an explicit parameter.
pub fn resolve_transform(name: &str, lambda: f64, est_dim: usize, source: Source) -> Result<TransformSpec, CliError> {
    let spec: TransformSpec = name.parse()?;
    let spec = if name.contains(':') {
        spec
    } else {
        match spec {
            TransformSpec::Lda { .. } => TransformSpec::Lda { lambda },
            TransformSpec::Est { stats_source, .. } => TransformSpec::Est { est_dim, stats_source },
            TransformSpec::EstL2 { stats_source, .. } => TransformSpec::EstL2 { est_dim, stats_source },
            other => other,
        }
    };
    if est_dim == 0 {
        return Err(CliError::config("--est-dim must be >= 1"));
    }
    let source = match source {
        Source::Auto => StatsSource::Auto,
        Source::Support => StatsSource::Support,
        Source::Base => StatsSource::Base,
    };
    Ok(spec.with_stats_source(source))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    manifest: &'a RunManifest,
    report: &'a EvalReport,
}

pub fn eval(args: &EvalArgs, timing: bool) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("eval", args, Some(args.seed), timing);
    let transform = resolve_transform(&args.transform, args.lambda, args.est_dim, args.stats_source)?;
    let cfg = EvalConfig {
        n_way: args.n_way,
        k_shot: args.k_shot,
        queries_per_class: args.queries,
        episodes: args.episodes,
        seed: args.seed,
        transform,
        distance_mode: match args.distance {
            Distance::Euclidean => DistanceMode::Euclidean,
            Distance::Varnorm => DistanceMode::Varnorm,
        },
    };
    // surface flag problems before touching any file
    cfg.validate()?;
    cfg.transform
        .check_compatible(cfg.k_shot, args.base_features.is_some())?;

    manifest.add_input(&args.features)?;
    let fs = load(&args.features)?;
    let base = match &args.base_features {
        Some(p) => {
            manifest.add_input(p)?;
            Some(load(p)?)
        }
        None => None,
    };
    let report = run_evaluation(&fs, base.as_ref(), &cfg)?;
    for w in &report.transform.warnings {
        log::warn!("{w}");
    }
    manifest.finish();
    let text = match args.format {
        OutputFormat::Json => json(&EvalOutput {
            manifest: &manifest,
            report: &report,
        }),
        OutputFormat::Csv => format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    };
    emit(&text, args.output.as_deref())
}

#[derive(Serialize)]
struct Population {
    exact: bool,
    mc_samples: Option<usize>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum TheoremReport {
    Shared(Theorem2Report),
    NWay(Theorem3Report),
    PerPair { n_way: usize, classes: Vec<i64> },
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    manifest: &'a RunManifest,
    theorem: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_way: Option<usize>,
    bound: BoundValue,
    /// Binary-bound terms at the requested shot count.
    terms: BoundReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<TheoremReport>,
    /// Terms divided by `Tr(S_b)^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    term_table: Option<TermTable>,
    /// The same, rescaled so the within-class entry is 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    term_table_rescaled: Option<TermTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    population: Option<Population>,
    warnings: Vec<String>,
}

/// Maps user-facing class ids to dense class indices.
fn dense_classes(ids: &[i64], known: &[i64]) -> Result<Vec<usize>, CliError> {
    ids.iter()
        .map(|id| {
            known
                .iter()
                .position(|k| k == id)
                .ok_or_else(|| CliError::config(format!("unknown class id {id}")))
        })
        .collect()
}

fn theorem3_n(n_way: Option<usize>, classes: Option<&[i64]>) -> Result<usize, CliError> {
    match (n_way, classes) {
        (Some(n), Some(c)) if n != c.len() => Err(CliError::config(format!(
            "--n-way {n} does not match the {} classes given",
            c.len()
        ))),
        (Some(n), _) => Ok(n),
        (None, Some(c)) => Ok(c.len()),
        (None, None) => Err(CliError::config("theorem 3 needs --n-way")),
    }
}

pub fn bound(args: &BoundArgs, timing: bool) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("bound", args, None, timing);
    let mode = pair_mode(args.pair_mode);
    if args.k_shot < 1 {
        return Err(CliError::config("k-shot must be >= 1"));
    }
    if args.theorem != 3 && (args.n_way.is_some() || args.classes.is_some()) {
        return Err(CliError::config("--n-way and --classes apply to theorem 3 only"));
    }
    let n_way = if args.theorem == 3 {
        Some(theorem3_n(args.n_way, args.classes.as_deref())?)
    } else {
        None
    };

    let (input, class_ids, population) = match (&args.features, &args.ensemble) {
        (Some(path), _) => {
            manifest.add_input(path)?;
            let fs = load(path)?;
            let divisor = match args.covariance {
                Covariance::Population => Divisor::Population,
                Covariance::Sample => Divisor::Sample,
            };
            let input = BoundInput::from_features(&fs, args.k_shot, mode, divisor)?;
            (input, fs.class_ids().to_vec(), None)
        }
        (None, Some(path)) => {
            manifest.add_input(path)?;
            let ens = load_ensemble(path)?;
            let pop = population_stats(&ens, args.mc_samples)?;
            let ids = (0..ens.class_count() as i64).collect();
            let population = Population {
                exact: pop.exact,
                mc_samples: pop.mc_samples,
            };
            (pop.bound_input(args.k_shot, mode)?, ids, Some(population))
        }
        (None, None) => return Err(CliError::config("pass --features or --ensemble")),
    };

    let mut warnings = Vec::new();
    let terms = theorem1_bound(&input)?;
    let (bound, report) = match args.theorem {
        1 => (terms.bound_value, None),
        2 => {
            let r = theorem2_bound(&input.stats, args.k_shot, mode)?;
            (r.bound_value, Some(TheoremReport::Shared(r)))
        }
        _ => {
            let n = n_way.expect("resolved above");
            match &args.classes {
                Some(ids) => {
                    let dense = dense_classes(ids, &class_ids)?;
                    let b = theorem3_bound_per_pair(&input, &dense)?;
                    (
                        b,
                        Some(TheoremReport::PerPair {
                            n_way: n,
                            classes: ids.clone(),
                        }),
                    )
                }
                None => {
                    let r = theorem3_bound(&input, n)?;
                    (r.bound_value, Some(TheoremReport::NWay(r)))
                }
            }
        }
    };
    let (term_table, term_table_rescaled) = if args.normalize_terms {
        match (bound_term_report(&input, false), bound_term_report(&input, true)) {
            (Ok(t), Ok(r)) => (Some(t), Some(r)),
            (Err(e), _) | (_, Err(e)) => {
                warnings.push(e.to_string());
                (None, None)
            }
        }
    } else {
        (None, None)
    };
    if bound.is_undefined() {
        warnings.push("bound denominator is zero; bound is undefined".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    manifest.finish();

    let text = match args.format {
        OutputFormat::Json => json(&BoundOutput {
            manifest: &manifest,
            theorem: args.theorem,
            n_way,
            bound,
            terms,
            report,
            term_table,
            term_table_rescaled,
            population,
            warnings,
        }),
        OutputFormat::Csv => {
            let mut s = format!("theorem,n_way,{}\n", BoundReport::CSV_HEADER);
            let row = terms.csv_row();
            // the shared row ends with the binary bound; swap in the requested one
            let row = row
                .rsplit_once(',')
                .map_or(row.clone(), |(head, _)| format!("{head},{bound}"));
            s.push_str(&format!("{},{},{row}\n", args.theorem, n_way.unwrap_or(2)));
            if let (Some(t), Some(r)) = (&term_table, &term_table_rescaled) {
                s.push_str(&format!(
                    "table,{}\nplain,{}\nrescaled,{}\n",
                    TermTable::CSV_HEADER,
                    t.csv_row(),
                    r.csv_row()
                ));
            }
            s
        }
    };
    emit(&text, None)
}

#[derive(Serialize)]
struct SynthOutput<'a> {
    manifest: &'a RunManifest,
    features: PathBuf,
    spec: PathBuf,
    rows: usize,
    classes: usize,
    dim: usize,
    features_sha256: String,
}

pub fn synth(args: &SynthArgs, timing: bool) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("synth", args, Some(args.seed), timing);
    if args.rows_per_class < 1 {
        return Err(CliError::config("--rows-per-class must be >= 1"));
    }
    let gaussian = GaussianParams {
        classes: args.classes,
        dim: args.dim,
        mean_radius: args.mean_radius,
        cov_scale: args.cov_scale,
        shared_covariance: args.shared_covariance,
    };
    let ens = match args.kind {
        Kind::Gaussian => make_gaussian_ensemble(&gaussian, args.seed),
        Kind::ReluGaussian => make_relu_ensemble(&gaussian, args.seed),
        Kind::Radial => make_radial_ensemble(
            &RadialParams {
                classes: args.classes,
                dim: args.dim,
                mean_norm: args.mean_norm,
                sigma_par: args.sigma_par,
                sigma_perp: args.sigma_perp,
                cone_spread: args.cone_spread,
            },
            args.seed,
        ),
    }
    .map_err(|e| CliError::config(e.to_string()))?;
    let fs = sample_features(&ens, args.rows_per_class, derive_seed(args.seed, "synth-rows"))?;

    let spec = args.spec_out.clone().unwrap_or_else(|| args.out.with_extension("json"));
    if spec == args.out {
        return Err(CliError::config("--spec-out must differ from --out"));
    }
    save_features(&fs, &args.out, FileFormat::from_path(&args.out))?;
    ens.save(&spec)?;
    let bytes = std::fs::read(&args.out).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    manifest.finish();
    emit(
        &json(&SynthOutput {
            manifest: &manifest,
            features: args.out.clone(),
            spec,
            rows: fs.rows(),
            classes: fs.class_count(),
            dim: fs.dim(),
            features_sha256: crate::manifest::sha256_hex(&bytes),
        }),
        None,
    )
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    manifest: &'a RunManifest,
    theorem: u8,
    k_shot: usize,
    pair_mode: PairMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_way: Option<usize>,
    bound: BoundValue,
    monte_carlo: RiskEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<AlphaStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<RiskEstimate>,
    margin: f64,
    verdict: &'static str,
    warnings: Vec<String>,
}

/// Risk within the bound plus the Monte Carlo margin. An undefined bound
/// constrains nothing.
fn within_bound(risk: f64, bound: BoundValue, margin: f64) -> bool {
    bound.value().is_none_or(|b| risk <= b + margin)
}

pub fn verify(args: &VerifyArgs, timing: bool) -> Result<bool, CliError> {
    let mut manifest = RunManifest::new("verify", args, Some(args.seed), timing);
    if args.theorem != 3 && args.n_way.is_some() {
        return Err(CliError::config("--n-way applies to theorem 3 only"));
    }
    let n_way = if args.theorem == 3 {
        Some(theorem3_n(args.n_way, None)?)
    } else {
        None
    };
    let mode = pair_mode(
        args.pair_mode
            .unwrap_or(if args.theorem == 3 { Pairs::Distinct } else { Pairs::Iid }),
    );
    manifest.add_input(&args.ensemble)?;
    let ens = load_ensemble(&args.ensemble)?;
    let pop = population_stats(&ens, args.mc_samples)?;
    let input = pop.bound_input(args.k_shot, mode)?;

    let mut warnings = Vec::new();
    let bound = match args.theorem {
        1 => theorem1_bound(&input)?.bound_value,
        2 => {
            let r = theorem2_bound(&pop.stats, args.k_shot, mode)?;
            if r.max_covariance_deviation > 1e-9 * pop.stats.mean_within_cov.norm().max(1e-300) {
                warnings.push(format!(
                    "class covariances differ (max Frobenius deviation {:.3e}); this bound assumes a shared covariance",
                    r.max_covariance_deviation
                ));
            }
            r.bound_value
        }
        _ => theorem3_bound(&input, n_way.expect("resolved above"))?.bound_value,
    };

    let (monte_carlo, alpha) = match n_way {
        None => {
            let a = monte_carlo_alpha_stats(&ens, args.k_shot, mode, args.trials, args.seed)?;
            let risk = RiskEstimate {
                value: a.prob_alpha_negative,
                stderr: a.stderr_prob,
                trials: a.trials,
                method: protoscope::synthetic::RiskMethod::MonteCarlo,
            };
            (risk, Some(a))
        }
        Some(n) => (
            monte_carlo_nway_risk(&ens, n, args.k_shot, args.trials, args.seed)?,
            None,
        ),
    };
    let exact = if ens.kind == EnsembleKind::Discrete && n_way.is_none() {
        match exact_risk_discrete(&ens, args.k_shot, mode) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("exact risk skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    let margin = PASS_MARGIN_STDERR * monte_carlo.stderr;
    let pass = within_bound(monte_carlo.value, bound, margin)
        && exact.as_ref().is_none_or(|e| within_bound(e.value, bound, 0.0));
    let verdict = if pass { "PASS" } else { "FAIL" };
    for w in &warnings {
        log::warn!("{w}");
    }
    eprintln!(
        "{verdict}: risk {:.6} (stderr {:.2e}{}) vs bound {bound} + margin {margin:.2e}",
        monte_carlo.value,
        monte_carlo.stderr,
        exact
            .as_ref()
            .map_or(String::new(), |e| format!(", exact {:.6}", e.value)),
    );
    manifest.finish();
    emit(
        &json(&VerifyOutput {
            manifest: &manifest,
            theorem: args.theorem,
            k_shot: args.k_shot,
            pair_mode: mode,
            n_way,
            bound,
            monte_carlo,
            alpha,
            exact,
            margin,
            verdict,
            warnings,
        }),
        None,
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct EigenOutput<'a> {
    manifest: &'a RunManifest,
    mean_within: f64,
    mean_between: f64,
    analysis: &'a protoscope::bounds::EigenAnalysis,
}

pub fn eigen(args: &EigenArgs, timing: bool) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("eigen", args, None, timing);
    manifest.add_input(&args.features)?;
    let fs = load(&args.features)?;
    let analysis = eigen_cosine_analysis(&fs, args.centered)?;
    for w in &analysis.warnings {
        log::warn!("{w}");
    }
    let mut csv = String::from("matrix,bin_lo,bin_hi,count\n");
    for (name, h) in [
        ("within", &analysis.within_histogram),
        ("between", &analysis.between_histogram),
    ] {
        for line in h.to_csv().lines().skip(1) {
            csv.push_str(&format!("{name},{line}\n"));
        }
    }
    std::fs::write(&args.out, csv).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    if let Some(p) = &args.records {
        std::fs::write(p, analysis.records_csv()).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
    }
    manifest.finish();
    emit(
        &json(&EigenOutput {
            manifest: &manifest,
            mean_within: analysis.mean_within(),
            mean_between: analysis.mean_between(),
            analysis: &analysis,
        }),
        None,
    )
}
