use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use protoscope::bounds::{theorem1_bound, theorem2_bound, theorem3_bound, BoundInput, BoundValue, PairMode};
use protoscope::classifier::DistanceMode;
use protoscope::evaluator::{run_evaluation, EvalConfig};
use protoscope::synthetic::{
    make_gaussian_ensemble, make_radial_ensemble, make_relu_ensemble, monte_carlo_alpha_stats, monte_carlo_nway_risk,
    population_stats, sample_features, GaussianParams, RadialParams, SyntheticEnsemble, DEFAULT_MC_SAMPLES,
};
use protoscope::{Divisor, FeatureSet};

fn to_py(e: protoscope::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn feature_set(features: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<FeatureSet> {
    if features.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    FeatureSet::from_rows(&features, &labels).map_err(to_py)
}

fn ensemble(spec: &str) -> PyResult<SyntheticEnsemble> {
    SyntheticEnsemble::from_json(spec).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(fs: &FeatureSet) -> (Vec<Vec<f64>>, Vec<i64>) {
    let rows = (0..fs.rows()).map(|i| fs.row_slice(i).to_vec()).collect();
    let labels = fs.labels().iter().map(|&l| fs.class_id(l)).collect();
    (rows, labels)
}

/// Episodic evaluation; returns mean accuracy, 95% half-width and the
/// per-episode accuracies.
#[pyfunction]
#[pyo3(signature = (features, labels, k_shot, n_way=5, queries=16, episodes=600, seed=0, transform="none", distance="euclidean", base_features=None, base_labels=None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
    k_shot: usize,
    n_way: usize,
    queries: usize,
    episodes: usize,
    seed: u64,
    transform: &str,
    distance: &str,
    base_features: Option<Vec<Vec<f64>>>,
    base_labels: Option<Vec<i64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let fs = feature_set(features, labels)?;
    let base = match (base_features, base_labels) {
        (Some(f), Some(l)) => Some(feature_set(f, l)?),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("base_features and base_labels go together")),
    };
    let cfg = EvalConfig {
        n_way,
        k_shot,
        queries_per_class: queries,
        episodes,
        seed,
        transform: parse(transform, "transform")?,
        distance_mode: parse::<DistanceMode>(distance, "distance")?,
    };
    let report = py.detach(|| run_evaluation(&fs, base.as_ref(), &cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean_accuracy", report.mean_accuracy)?;
    d.set_item("ci95_halfwidth", report.ci95_halfwidth)?;
    d.set_item("per_episode_accuracies", report.per_episode_accuracies)?;
    d.set_item("transform", report.transform.name)?;
    d.set_item("fitted_dim", report.transform.fitted_dim)?;
    d.set_item("warnings", report.transform.warnings)?;
    Ok(d)
}

/// Binary-bound terms and value from the sample statistics of a feature set.
/// The bound is `None` when undefined.
#[pyfunction]
#[pyo3(signature = (features, labels, k_shot, pair_mode="iid", covariance="population"))]
fn binary_bound<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
    k_shot: usize,
    pair_mode: &str,
    covariance: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let fs = feature_set(features, labels)?;
    let divisor = match covariance {
        "population" => Divisor::Population,
        "sample" => Divisor::Sample,
        other => {
            return Err(PyValueError::new_err(format!(
                "covariance must be population or sample, got '{other}'"
            )))
        }
    };
    let input =
        BoundInput::from_features(&fs, k_shot, parse::<PairMode>(pair_mode, "pair_mode")?, divisor).map_err(to_py)?;
    let r = theorem1_bound(&input).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("term_norm_variance", r.term_norm_variance)?;
    d.set_item("term_trace_variance", r.term_trace_variance)?;
    d.set_item("term_within", r.term_within)?;
    d.set_item("term_mean_dist", r.term_mean_dist)?;
    d.set_item("trace_between_sq", r.trace_between_sq)?;
    d.set_item("bound", r.bound_value.value())?;
    Ok(d)
}

/// Bound from the population statistics of an ensemble spec (JSON).
#[pyfunction]
#[pyo3(signature = (spec, k_shot, theorem=1, pair_mode="iid", n_way=None, mc_samples=DEFAULT_MC_SAMPLES))]
fn ensemble_bound(
    py: Python<'_>,
    spec: &str,
    k_shot: usize,
    theorem: u8,
    pair_mode: &str,
    n_way: Option<usize>,
    mc_samples: usize,
) -> PyResult<Option<f64>> {
    let ens = ensemble(spec)?;
    let mode: PairMode = parse(pair_mode, "pair_mode")?;
    let value: BoundValue = py
        .detach(|| -> protoscope::Result<BoundValue> {
            let pop = population_stats(&ens, mc_samples)?;
            let input = pop.bound_input(k_shot, mode)?;
            Ok(match theorem {
                1 => theorem1_bound(&input)?.bound_value,
                2 => theorem2_bound(&pop.stats, k_shot, mode)?.bound_value,
                3 => theorem3_bound(&input, n_way.unwrap_or(2))?.bound_value,
                _ => {
                    return Err(protoscope::Error::Config(format!(
                        "theorem must be 1, 2 or 3, got {theorem}"
                    )))
                }
            })
        })
        .map_err(to_py)?;
    Ok(value.value())
}

/// Monte Carlo misclassification risk `(value, stderr)`; binary unless
/// `n_way` is given.
#[pyfunction]
#[pyo3(signature = (spec, k_shot, trials=100_000, seed=0, pair_mode="iid", n_way=None))]
fn monte_carlo_risk(
    py: Python<'_>,
    spec: &str,
    k_shot: usize,
    trials: u64,
    seed: u64,
    pair_mode: &str,
    n_way: Option<usize>,
) -> PyResult<(f64, f64)> {
    let ens = ensemble(spec)?;
    let mode: PairMode = parse(pair_mode, "pair_mode")?;
    py.detach(|| match n_way {
        Some(n) => monte_carlo_nway_risk(&ens, n, k_shot, trials, seed).map(|r| (r.value, r.stderr)),
        None => {
            monte_carlo_alpha_stats(&ens, k_shot, mode, trials, seed).map(|a| (a.prob_alpha_negative, a.stderr_prob))
        }
    })
    .map_err(to_py)
}

/// Random radial ensemble as a JSON spec.
#[pyfunction]
#[pyo3(signature = (classes, dim, mean_norm=3.0, sigma_par=1.0, sigma_perp=0.1, cone_spread=None, seed=0))]
fn radial_ensemble(
    classes: usize,
    dim: usize,
    mean_norm: f64,
    sigma_par: f64,
    sigma_perp: f64,
    cone_spread: Option<f64>,
    seed: u64,
) -> PyResult<String> {
    let params = RadialParams {
        classes,
        dim,
        mean_norm,
        sigma_par,
        sigma_perp,
        cone_spread,
    };
    make_radial_ensemble(&params, seed)
        .and_then(|e| e.to_json())
        .map_err(to_py)
}

/// Random Gaussian (or ReLU-Gaussian) ensemble as a JSON spec.
#[pyfunction]
#[pyo3(signature = (classes, dim, mean_radius=2.0, cov_scale=1.0, shared_covariance=false, relu=false, seed=0))]
fn gaussian_ensemble(
    classes: usize,
    dim: usize,
    mean_radius: f64,
    cov_scale: f64,
    shared_covariance: bool,
    relu: bool,
    seed: u64,
) -> PyResult<String> {
    let params = GaussianParams {
        classes,
        dim,
        mean_radius,
        cov_scale,
        shared_covariance,
    };
    let ens = if relu {
        make_relu_ensemble(&params, seed)
    } else {
        make_gaussian_ensemble(&params, seed)
    };
    ens.and_then(|e| e.to_json()).map_err(to_py)
}

/// Samples `rows_per_class` rows of every class: `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (spec, rows_per_class, seed=0))]
fn sample(spec: &str, rows_per_class: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<i64>)> {
    let ens = ensemble(spec)?;
    let fs = sample_features(&ens, rows_per_class, seed).map_err(to_py)?;
    Ok(to_rows(&fs))
}

/// Reads a CSV or PFV1 feature file: `(features, labels)`.
#[pyfunction]
fn load_features(path: &str) -> PyResult<(Vec<Vec<f64>>, Vec<i64>)> {
    let p = std::path::Path::new(path);
    let fs = protoscope::feature_store::load_features(p, protoscope::FileFormat::from_path(p)).map_err(to_py)?;
    Ok(to_rows(&fs))
}

#[pymodule]
fn protoscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", protoscope::VERSION)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(binary_bound, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_bound, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_risk, m)?)?;
    m.add_function(wrap_pyfunction!(radial_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(load_features, m)?)?;
    Ok(())
}
