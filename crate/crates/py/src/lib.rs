//! Python bindings for the lanecast cost-estimation engine.
//!
//! The module exposes the engine's main types and operations: job records,
//! geodesic distances, the weighted nearest-neighbor estimator, weight
//! training, walk-forward backtests, stepwise regression, the statistics
//! helpers, and the sealed-bid auction simulation. Estimates, reports, and
//! simulation results come back as plain dicts so they drop straight into
//! pandas or json.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lanecast::backtest::{run_trial, TrialConfig};
use lanecast::domain::{
    self, default_datum, Dataset, GeoPoint, JobRecord, LoadUnit, Segmentation,
};
use lanecast::economics::{self, AuctionConfig};
use lanecast::geo;
use lanecast::knn::{self, AttributeWeights, EstimatorConfig, SolutionWeighting};
use lanecast::regression::{self, FeatureSpec, LinearModel};
use lanecast::simplex::{self, SimplexOptions};
use lanecast::stats::{self, Tail};
use lanecast::synth::{self, SyntheticSpec};
use lanecast::training::{self, TrainingConfig};

/// Maps an engine error onto a Python ValueError.
fn value_error(err: lanecast::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_mode(mode: &str) -> PyResult<SolutionWeighting> {
    mode.parse().map_err(value_error)
}

fn parse_tail(tail: &str) -> PyResult<Tail> {
    match tail.trim().to_ascii_lowercase().as_str() {
        "two-sided" | "two_sided" => Ok(Tail::TwoSided),
        "greater" | "one-sided" | "one_sided" => Ok(Tail::Greater),
        other => Err(PyValueError::new_err(format!(
            "unknown tail {other:?} (expected two-sided or greater)"
        ))),
    }
}

fn parse_weights(weights: (f64, f64, f64, f64)) -> PyResult<AttributeWeights> {
    AttributeWeights::new(weights.0, weights.1, weights.2, weights.3).map_err(value_error)
}

/// One completed freight job.
///
/// `date` is a day number; only differences between dates matter to the
/// estimator. `load_size` is the shipment volume as a fraction of one
/// standard container.
#[pyclass(module = "lanecast_py", from_py_object)]
#[derive(Clone)]
pub struct Job {
    inner: JobRecord,
}

#[pymethods]
impl Job {
    #[new]
    #[pyo3(signature = (id, date, col_lat, col_lng, del_lat, del_lng, load_size, cost_eur,
                        revenue_eur=None, direction="export", collection_country=None,
                        delivery_country=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        id: u64,
        date: i64,
        col_lat: f64,
        col_lng: f64,
        del_lat: f64,
        del_lng: f64,
        load_size: f64,
        cost_eur: f64,
        revenue_eur: Option<f64>,
        direction: &str,
        collection_country: Option<String>,
        delivery_country: Option<String>,
    ) -> PyResult<Self> {
        let record = JobRecord {
            id,
            date,
            collection: GeoPoint::new(col_lat, col_lng).map_err(value_error)?,
            delivery: GeoPoint::new(del_lat, del_lng).map_err(value_error)?,
            load_size,
            cost_eur,
            revenue_eur,
            direction: direction.parse().map_err(value_error)?,
            collection_country,
            delivery_country,
        };
        record.validate().map_err(value_error)?;
        Ok(Job { inner: record })
    }

    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn date(&self) -> i64 {
        self.inner.date
    }

    #[getter]
    fn col_lat(&self) -> f64 {
        self.inner.collection.lat
    }

    #[getter]
    fn col_lng(&self) -> f64 {
        self.inner.collection.lng
    }

    #[getter]
    fn del_lat(&self) -> f64 {
        self.inner.delivery.lat
    }

    #[getter]
    fn del_lng(&self) -> f64 {
        self.inner.delivery.lng
    }

    #[getter]
    fn load_size(&self) -> f64 {
        self.inner.load_size
    }

    #[getter]
    fn cost_eur(&self) -> f64 {
        self.inner.cost_eur
    }

    #[getter]
    fn revenue_eur(&self) -> Option<f64> {
        self.inner.revenue_eur
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.inner.direction.label()
    }

    #[getter]
    fn collection_country(&self) -> Option<String> {
        self.inner.collection_country.clone()
    }

    #[getter]
    fn delivery_country(&self) -> Option<String> {
        self.inner.delivery_country.clone()
    }

    /// Cost per full container load.
    fn normalized_cost(&self) -> f64 {
        domain::normalized_cost(&self.inner)
    }

    /// Great-circle distance between collection and delivery, in km.
    fn crow_distance_km(&self) -> f64 {
        geo::crow_distance_km(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Job(id={}, date={}, load_size={:.3}, cost_eur={:.2})",
            self.inner.id, self.inner.date, self.inner.load_size, self.inner.cost_eur
        )
    }
}

fn records(jobs: &[Job]) -> Vec<JobRecord> {
    jobs.iter().map(|j| j.inner.clone()).collect()
}

fn wrap_jobs(records: &[JobRecord]) -> Vec<Job> {
    records.iter().map(|r| Job { inner: r.clone() }).collect()
}

fn dataset_from(jobs: &[Job]) -> PyResult<Dataset> {
    Dataset::new(records(jobs), default_datum()).map_err(value_error)
}

/// Great-circle distance between two coordinates, in km.
#[pyfunction]
fn haversine_km(lat1: f64, lng1: f64, lat2: f64, lng2: f64) -> PyResult<f64> {
    let a = GeoPoint::new(lat1, lng1).map_err(value_error)?;
    let b = GeoPoint::new(lat2, lng2).map_err(value_error)?;
    Ok(geo::haversine_km(&a, &b))
}

/// Converts a quantity in some unit (standard_pallet, euro_pallet,
/// loading_meter, kg, container) to a load size in container units.
#[pyfunction]
#[pyo3(signature = (quantity, unit="standard_pallet"))]
fn code_load_size(quantity: f64, unit: &str) -> PyResult<f64> {
    let unit: LoadUnit = unit.parse().map_err(value_error)?;
    domain::code_load_size(quantity, unit).map_err(value_error)
}

/// Generates the built-in synthetic shipping scenario.
#[pyfunction]
fn generate_synthetic(n_jobs: usize, seed: u64) -> PyResult<Vec<Job>> {
    let dataset = synth::generate(&SyntheticSpec::example(n_jobs, seed)).map_err(value_error)?;
    Ok(wrap_jobs(dataset.jobs()))
}

/// Parses the jobs CSV format; returns (jobs, rejections) where each
/// rejection is a (1-based file line, reason) tuple.
#[pyfunction]
fn parse_jobs_csv(text: &str) -> PyResult<(Vec<Job>, Vec<(usize, String)>)> {
    let (dataset, rejections) = domain::parse_jobs_csv(text).map_err(value_error)?;
    Ok((
        wrap_jobs(dataset.jobs()),
        rejections.into_iter().map(|r| (r.row, r.reason)).collect(),
    ))
}

/// Renders jobs in the jobs CSV format.
#[pyfunction]
fn jobs_to_csv(jobs: Vec<Job>) -> PyResult<String> {
    Ok(domain::to_csv(&dataset_from(&jobs)?))
}

/// Splits jobs into test / historical / training id lists: the most recent
/// third is the test segment, the rest splits by `historical_share`.
#[pyfunction]
#[pyo3(signature = (jobs, seed=42, historical_share=0.6))]
fn segment_jobs(
    py: Python<'_>,
    jobs: Vec<Job>,
    seed: u64,
    historical_share: f64,
) -> PyResult<Py<PyDict>> {
    let dataset = dataset_from(&jobs)?;
    let seg: Segmentation =
        domain::segment(&dataset, seed, historical_share).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("test", seg.test)?;
    out.set_item("historical", seg.historical)?;
    out.set_item("training", seg.training)?;
    Ok(out.into())
}

/// Weighted attribute distance between two jobs.
#[pyfunction]
#[pyo3(signature = (a, b, weights=(1.0, 1.0, 1.0, 1.0)))]
fn attribute_distance(a: &Job, b: &Job, weights: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(knn::attribute_distance(&a.inner, &b.inner, &parse_weights(weights)?))
}

/// Estimates a probe job's cost from a pool of historical jobs.
///
/// Returns a dict with the estimate, the exact-match flag, the retrieved
/// neighbor ids and distances, and the pool size.
#[pyfunction]
#[pyo3(signature = (pool, probe, k=5, weights=(1.0, 1.0, 1.0, 1.0), mode="proportional",
                    exact_match_epsilon=1e-9))]
fn estimate_cost(
    py: Python<'_>,
    pool: Vec<Job>,
    probe: &Job,
    k: usize,
    weights: (f64, f64, f64, f64),
    mode: &str,
    exact_match_epsilon: f64,
) -> PyResult<Py<PyDict>> {
    let cfg = EstimatorConfig {
        k,
        weights: parse_weights(weights)?,
        mode: parse_mode(mode)?,
        exact_match_epsilon,
    };
    let estimate =
        knn::estimate_cost_detailed(&records(&pool), &probe.inner, &cfg).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("cost_eur", estimate.cost_eur)?;
    out.set_item("exact_match", estimate.exact_match)?;
    out.set_item(
        "neighbor_ids",
        estimate.neighbors.iter().map(|n| n.id).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "neighbor_distances",
        estimate.neighbors.iter().map(|n| n.distance).collect::<Vec<_>>(),
    )?;
    out.set_item("pool_size", estimate.pool_size)?;
    Ok(out.into())
}

/// Trains attribute weights for one k: random search over seeded candidates,
/// then downhill-simplex fine-tuning of the best one.
#[pyfunction]
#[pyo3(signature = (historical, training, k=5, seed=42, random_iterations=500,
                    simplex_max_iterations=200, mode="proportional"))]
fn train_weights(
    py: Python<'_>,
    historical: Vec<Job>,
    training: Vec<Job>,
    k: usize,
    seed: u64,
    random_iterations: usize,
    simplex_max_iterations: usize,
    mode: &str,
) -> PyResult<Py<PyDict>> {
    let mut cfg = TrainingConfig::desk_scale(seed);
    cfg.k_range = vec![k];
    cfg.random_iterations = random_iterations;
    cfg.simplex.max_iterations = simplex_max_iterations;
    cfg.mode = parse_mode(mode)?;
    let model =
        training::train_k(&records(&historical), &records(&training), k, &cfg).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("k", model.k)?;
    out.set_item("weights", model.weights.as_array().to_vec())?;
    out.set_item("training_mape", model.training_mape)?;
    out.set_item("random_search_mape", model.random_search_mape)?;
    out.set_item("random_iterations", model.iterations_used.random)?;
    out.set_item("simplex_iterations", model.iterations_used.simplex)?;
    out.set_item("seed", model.seed)?;
    Ok(out.into())
}

/// Runs a walk-forward backtest over the test segment and returns a summary
/// dict (set `weights` to use trained weights; omit it for the untrained
/// unit-weight arm).
#[pyfunction]
#[pyo3(signature = (jobs, seed=42, k=5, weights=None, historical_share=0.6, lag_days=30,
                    mode="proportional"))]
#[allow(clippy::too_many_arguments)]
fn run_backtest(
    py: Python<'_>,
    jobs: Vec<Job>,
    seed: u64,
    k: usize,
    weights: Option<(f64, f64, f64, f64)>,
    historical_share: f64,
    lag_days: i64,
    mode: &str,
) -> PyResult<Py<PyDict>> {
    let dataset = dataset_from(&jobs)?;
    let seg = domain::segment(&dataset, seed, historical_share).map_err(value_error)?;
    let mut cfg = TrialConfig::untrained(k);
    if let Some(w) = weights {
        cfg.weights = parse_weights(w)?;
    }
    cfg.lag_days = lag_days;
    cfg.mode = parse_mode(mode)?;
    let report = run_trial(&seg, &dataset, &cfg).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("k", report.k)?;
    out.set_item("n", report.rows.len())?;
    out.set_item("skipped", report.skipped.len())?;
    out.set_item("outliers", report.outlier_ids.len())?;
    if let Some(overall) = &report.overall {
        out.set_item("mape_pct", overall.mape_pct)?;
        out.set_item("median_ape_pct", overall.median_ape_pct)?;
        out.set_item("q3_ape_pct", overall.q3_ape_pct)?;
        out.set_item("mean_error_pct", overall.mean_error_pct)?;
    }
    Ok(out.into())
}

/// Fits the forward-stepwise regression baseline; returns the model as a
/// JSON string for `predict_regression`.
#[pyfunction]
fn fit_regression(jobs: Vec<Job>) -> PyResult<String> {
    let model =
        regression::fit_stepwise(&records(&jobs), &FeatureSpec::default()).map_err(value_error)?;
    Ok(model.to_json())
}

/// Predicts costs for jobs with a model from `fit_regression`.
#[pyfunction]
fn predict_regression(model_json: &str, jobs: Vec<Job>) -> PyResult<Vec<f64>> {
    let model = LinearModel::from_json(model_json).map_err(value_error)?;
    Ok(regression::predict_batch(&model, &records(&jobs)))
}

/// Mean absolute percentage error of estimates against actuals, in percent.
#[pyfunction]
fn mape(actual: Vec<f64>, estimated: Vec<f64>) -> PyResult<f64> {
    stats::mape(&actual, &estimated).map_err(value_error)
}

/// Linearly interpolated percentile; `p` is a fraction in [0, 1].
#[pyfunction]
fn percentile(values: Vec<f64>, p: f64) -> PyResult<f64> {
    stats::percentile(&values, p).map_err(value_error)
}

/// Mean with standard error and a t-based confidence interval.
#[pyfunction]
#[pyo3(signature = (values, level=0.95))]
fn mean_ci(py: Python<'_>, values: Vec<f64>, level: f64) -> PyResult<Py<PyDict>> {
    let ci = stats::mean_ci(&values, level).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("mean", ci.mean)?;
    out.set_item("se", ci.se)?;
    out.set_item("lo", ci.lo)?;
    out.set_item("hi", ci.hi)?;
    out.set_item("df", ci.df)?;
    Ok(out.into())
}

/// Paired t-test of a against b; tail is "two-sided" or "greater"
/// (H1: mean(a - b) > 0).
#[pyfunction]
#[pyo3(signature = (a, b, tail="two-sided"))]
fn paired_t_test(py: Python<'_>, a: Vec<f64>, b: Vec<f64>, tail: &str) -> PyResult<Py<PyDict>> {
    let test = stats::paired_t_test(&a, &b, parse_tail(tail)?).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("t", test.t)?;
    out.set_item("p", test.p)?;
    out.set_item("df", test.df)?;
    out.set_item("mean_diff", test.mean_diff)?;
    Ok(out.into())
}

/// Pearson correlation coefficient.
#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::pearson(&a, &b).map_err(value_error)
}

/// Derives the manual estimation-error profile and realized gross margin
/// from (cost, revenue) pairs.
#[pyfunction]
fn derive_manual_margin(py: Python<'_>, pairs: Vec<(f64, f64)>) -> PyResult<Py<PyDict>> {
    let profile = economics::derive_manual_margin(&pairs).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("t", profile.t)?;
    out.set_item("n", profile.n)?;
    out.set_item("mean_error_pct", profile.mean_error_pct)?;
    out.set_item("mape_pct", profile.mape_pct)?;
    out.set_item("q3_ape_pct", profile.q3_ape_pct)?;
    out.set_item("std_dev_pct", profile.std_dev_pct)?;
    out.set_item("errors_eur", profile.errors_eur)?;
    out.set_item("errors_pct", profile.errors_pct)?;
    Ok(out.into())
}

/// Simulates the sealed-bid auction and returns the per-estimate
/// indifference labor cost with its confidence interval and win rates.
#[pyfunction]
#[pyo3(signature = (costs, manual_errors, method_errors, competitor_errors, seed=42,
                    n_bidders=3, target_margin=0.151, trials=25_000,
                    common_random_numbers=true))]
#[allow(clippy::too_many_arguments)]
fn simulate_indifference(
    py: Python<'_>,
    costs: Vec<f64>,
    manual_errors: Vec<f64>,
    method_errors: Vec<f64>,
    competitor_errors: Vec<f64>,
    seed: u64,
    n_bidders: usize,
    target_margin: f64,
    trials: usize,
    common_random_numbers: bool,
) -> PyResult<Py<PyDict>> {
    let mut cfg = AuctionConfig::new(costs, manual_errors, method_errors, competitor_errors, seed);
    cfg.n_bidders = n_bidders;
    cfg.target_margin = target_margin;
    cfg.trials = trials;
    cfg.common_random_numbers = common_random_numbers;
    let result = economics::simulate_indifference(&cfg).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("indifference_cost_eur", result.indifference_cost_eur)?;
    out.set_item("ci_lo_eur", result.ci_lo_eur)?;
    out.set_item("ci_hi_eur", result.ci_hi_eur)?;
    out.set_item("manual_profit_eur", result.manual_profit_eur)?;
    out.set_item("method_profit_eur", result.method_profit_eur)?;
    out.set_item("manual_win_rate", result.manual_win_rate)?;
    out.set_item("method_win_rate", result.method_win_rate)?;
    out.set_item("trials", result.trials)?;
    Ok(out.into())
}

/// Hours of estimation labor per job at which the indifference cost is
/// spent, given an hourly rate.
#[pyfunction]
fn break_even_hours(indifference_cost_eur: f64, hourly_rate_eur: f64) -> PyResult<f64> {
    economics::break_even_hours(indifference_cost_eur, hourly_rate_eur).map_err(value_error)
}

/// Minimizes a Python callable over R^n with the downhill-simplex method.
///
/// The callable receives a list of floats and must return a float;
/// exceptions it raises propagate out of the minimization.
#[pyfunction]
#[pyo3(signature = (f, x0, max_iterations=2_500, x_tolerance=1e-8, f_tolerance=1e-8))]
fn minimize(
    py: Python<'_>,
    f: Py<PyAny>,
    x0: Vec<f64>,
    max_iterations: usize,
    x_tolerance: f64,
    f_tolerance: f64,
) -> PyResult<Py<PyDict>> {
    let opts = SimplexOptions {
        max_iterations,
        x_tolerance,
        f_tolerance,
        ..SimplexOptions::default()
    };
    let mut captured: Option<PyErr> = None;
    let objective = |x: &[f64]| -> f64 {
        if captured.is_some() {
            return f64::NAN;
        }
        let value = f
            .call1(py, (x.to_vec(),))
            .and_then(|v| v.extract::<f64>(py));
        match value {
            Ok(v) => v,
            Err(err) => {
                captured = Some(err);
                f64::NAN
            }
        }
    };
    let outcome = simplex::minimize(objective, &x0, &opts);
    if let Some(err) = captured {
        return Err(err);
    }
    let result = outcome.map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("x", result.x)?;
    out.set_item("fx", result.fx)?;
    out.set_item("iterations", result.iterations)?;
    out.set_item("evaluations", result.evaluations)?;
    out.set_item("converged", result.converged)?;
    out.set_item("best_trace", result.best_trace)?;
    Ok(out.into())
}

/// Cost estimation by analogy for freight consignments, with training,
/// backtesting, statistics, and auction-economics tooling.
#[pymodule]
fn lanecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Job>()?;
    m.add_function(wrap_pyfunction!(haversine_km, m)?)?;
    m.add_function(wrap_pyfunction!(code_load_size, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(parse_jobs_csv, m)?)?;
    m.add_function(wrap_pyfunction!(jobs_to_csv, m)?)?;
    m.add_function(wrap_pyfunction!(segment_jobs, m)?)?;
    m.add_function(wrap_pyfunction!(attribute_distance, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(train_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_backtest, m)?)?;
    m.add_function(wrap_pyfunction!(fit_regression, m)?)?;
    m.add_function(wrap_pyfunction!(predict_regression, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ci, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(derive_manual_margin, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_indifference, m)?)?;
    m.add_function(wrap_pyfunction!(break_even_hours, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    Ok(())
}
