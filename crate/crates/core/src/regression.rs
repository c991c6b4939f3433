//! Forward-stepwise linear regression baseline over job features, plus the
//! min-combination rule for merging it with the analogy estimate.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{GeoPoint, JobRecord};
use crate::geo::haversine_km;
use crate::{Error, Result};

/// Feature recipe: three numeric predictors (load size, crow distance,
/// date), two categorical predictors (collection and delivery country),
/// rare-category merging, and z-score outlier clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Categories seen fewer than this many times in training collapse into
    /// a shared OTHER level.
    #[serde(default = "default_rare_threshold")]
    pub rare_threshold: usize,
    /// Numeric fit columns are clamped to mean ± z_cap · sd at fit time;
    /// prediction uses raw features.
    #[serde(default = "default_z_cap")]
    pub z_cap: f64,
}

fn default_rare_threshold() -> usize {
    10
}

fn default_z_cap() -> f64 {
    3.0
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { rare_threshold: 10, z_cap: 3.0 }
    }
}

impl FeatureSpec {
    fn validate(&self) -> Result<()> {
        if self.rare_threshold < 1 {
            return Err(Error::InvalidParameter("rare threshold must be >= 1".into()));
        }
        if !(self.z_cap > 0.0) || !self.z_cap.is_finite() {
            return Err(Error::InvalidParameter("z-cap must be a finite value > 0".into()));
        }
        Ok(())
    }
}

/// Candidate predictor groups; a categorical group enters whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorGroup {
    LoadSize,
    CrowDistanceKm,
    Date,
    CollectionCountry,
    DeliveryCountry,
}

impl PredictorGroup {
    const ALL: [PredictorGroup; 5] = [
        PredictorGroup::LoadSize,
        PredictorGroup::CrowDistanceKm,
        PredictorGroup::Date,
        PredictorGroup::CollectionCountry,
        PredictorGroup::DeliveryCountry,
    ];

    /// Stable name used in reports and serialized models.
    pub fn label(&self) -> &'static str {
        match self {
            PredictorGroup::LoadSize => "load_size",
            PredictorGroup::CrowDistanceKm => "crow_distance_km",
            PredictorGroup::Date => "date",
            PredictorGroup::CollectionCountry => "collection_country",
            PredictorGroup::DeliveryCountry => "delivery_country",
        }
    }
}

impl fmt::Display for PredictorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One design-matrix column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Column {
    LoadSize,
    CrowDistanceKm,
    Date,
    CollectionCountry(String),
    DeliveryCountry(String),
}

impl Column {
    fn group(&self) -> PredictorGroup {
        match self {
            Column::LoadSize => PredictorGroup::LoadSize,
            Column::CrowDistanceKm => PredictorGroup::CrowDistanceKm,
            Column::Date => PredictorGroup::Date,
            Column::CollectionCountry(_) => PredictorGroup::CollectionCountry,
            Column::DeliveryCountry(_) => PredictorGroup::DeliveryCountry,
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(self, Column::LoadSize | Column::CrowDistanceKm | Column::Date)
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::LoadSize | Column::CrowDistanceKm | Column::Date => {
                f.write_str(self.group().label())
            }
            Column::CollectionCountry(l) | Column::DeliveryCountry(l) => {
                write!(f, "{}={}", self.group().label(), l)
            }
        }
    }
}

/// Category levels kept per categorical feature, captured at fit time;
/// anything else maps to the implicit OTHER baseline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDictionaries {
    pub collection: Vec<String>,
    pub delivery: Vec<String>,
}

/// Label for one endpoint: the explicit country code when present,
/// otherwise a coarse 5-degree grid cell of the coordinates.
pub(crate) fn endpoint_label(country: Option<&str>, point: &GeoPoint) -> String {
    match country.map(str::trim).filter(|c| !c.is_empty()) {
        Some(c) => c.to_uppercase(),
        None => {
            let snap = |v: f64| ((v / 5.0).round() * 5.0) as i64;
            format!("cell_{}_{}", snap(point.lat), snap(point.lng))
        }
    }
}

fn collection_label(job: &JobRecord) -> String {
    endpoint_label(job.collection_country.as_deref(), &job.collection)
}

fn delivery_label(job: &JobRecord) -> String {
    endpoint_label(job.delivery_country.as_deref(), &job.delivery)
}

/// Builds the kept-category dictionaries from training jobs: every label
/// seen at least `rare_threshold` times, in sorted order.
pub fn build_dictionaries(jobs: &[JobRecord], spec: &FeatureSpec) -> CategoryDictionaries {
    let keep = |labels: Vec<String>| -> Vec<String> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .filter(|&(_, c)| c >= spec.rare_threshold)
            .map(|(l, _)| l)
            .collect()
    };
    CategoryDictionaries {
        collection: keep(jobs.iter().map(collection_label).collect()),
        delivery: keep(jobs.iter().map(delivery_label).collect()),
    }
}

fn full_columns(dicts: &CategoryDictionaries) -> Vec<Column> {
    let mut cols = vec![Column::LoadSize, Column::CrowDistanceKm, Column::Date];
    cols.extend(dicts.collection.iter().cloned().map(Column::CollectionCountry));
    cols.extend(dicts.delivery.iter().cloned().map(Column::DeliveryCountry));
    cols
}

fn column_value(col: &Column, job: &JobRecord) -> f64 {
    match col {
        Column::LoadSize => job.load_size,
        Column::CrowDistanceKm => haversine_km(&job.collection, &job.delivery),
        Column::Date => job.date as f64,
        Column::CollectionCountry(l) => (collection_label(job) == *l) as u8 as f64,
        Column::DeliveryCountry(l) => (delivery_label(job) == *l) as u8 as f64,
    }
}

/// Numeric feature vector for one job: load size, crow distance and date
/// passed through, then one indicator per kept category (rare and unseen
/// labels fall into the all-zero OTHER baseline).
pub fn build_features(job: &JobRecord, dicts: &CategoryDictionaries) -> Vec<f64> {
    full_columns(dicts)
        .iter()
        .map(|c| column_value(c, job))
        .collect()
}

/// Clamps values beyond mean ± z_cap·sd to the boundary (sample standard
/// deviation). Columns with fewer than 3 values or zero spread pass through.
pub fn trim_outliers(column: &[f64], z_cap: f64) -> Vec<f64> {
    let n = column.len();
    if n < 3 {
        return column.to_vec();
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return column.to_vec();
    }
    let (lo, hi) = (mean - z_cap * sd, mean + z_cap * sd);
    column.iter().map(|&v| v.clamp(lo, hi)).collect()
}

/// One fitted coefficient with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub column: Column,
    pub value: f64,
    /// Standard error from the final fit; 0 for degenerate columns or when
    /// there are no residual degrees of freedom.
    pub se: f64,
}

/// Fitted stepwise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Groups in acceptance order.
    pub selected_groups: Vec<PredictorGroup>,
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    pub aic: f64,
    /// Intercept-only AIC followed by the AIC after each accepted step;
    /// strictly decreasing.
    pub aic_trace: Vec<f64>,
    pub dictionaries: CategoryDictionaries,
    /// Columns dropped as linearly dependent during the final fit; their
    /// coefficients are zero.
    pub degenerate_columns: Vec<Column>,
    pub n_training: usize,
}

impl LinearModel {
    /// Serializes the model to pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Reads a model back from JSON.
    pub fn from_json(text: &str) -> Result<LinearModel> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Least-squares fit of y on an intercept plus the given columns, with
/// linearly dependent columns dropped.
struct FitOutcome {
    /// Intercept followed by one coefficient per input column (dropped
    /// columns get 0).
    beta: Vec<f64>,
    rss: f64,
    dropped: Vec<usize>,
    /// Effective parameter count: intercept + retained columns.
    n_params: usize,
    /// Standard errors aligned with `beta`.
    se: Vec<f64>,
}

fn fit_least_squares(columns: &[&[f64]], y: &[f64]) -> FitOutcome {
    let n = y.len();
    let mut retained: Vec<usize> = (0..columns.len()).collect();
    let mut dropped = Vec::new();
    loop {
        let p = retained.len() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| {
            if j == 0 {
                1.0
            } else {
                columns[retained[j - 1]][i]
            }
        });
        let y_vec = DVector::from_row_slice(y);
        let qr = x.clone().qr();
        let r = qr.r();
        let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
        let tol = diag_max * (n.max(p) as f64) * f64::EPSILON;
        // drop the first column whose pivot collapsed, then refactor
        if let Some(j) = (0..p).find(|&i| r[(i, i)].abs() <= tol) {
            if j == 0 {
                // the intercept pivot only collapses when everything is zero
                return FitOutcome {
                    beta: vec![0.0; columns.len() + 1],
                    rss: y.iter().map(|v| v * v).sum(),
                    dropped: retained,
                    n_params: 1,
                    se: vec![0.0; columns.len() + 1],
                };
            }
            dropped.push(retained.remove(j - 1));
            continue;
        }
        let qty = qr.q().transpose() * &y_vec;
        let Some(solution) = r.solve_upper_triangular(&qty) else {
            // pivot check passed but the solve still failed: drop the
            // weakest pivot and retry
            let j = (1..p)
                .min_by(|&a, &b| r[(a, a)].abs().total_cmp(&r[(b, b)].abs()))
                .expect("non-intercept column present");
            dropped.push(retained.remove(j - 1));
            continue;
        };
        let residual = &y_vec - &x * &solution;
        let rss = residual.dot(&residual);
        // standard errors from sigma^2 (R^T R)^-1
        let se_retained: Vec<f64> = if n > p {
            let sigma2 = rss / (n - p) as f64;
            match r.solve_upper_triangular(&DMatrix::identity(p, p)) {
                Some(r_inv) => (0..p)
                    .map(|i| (sigma2 * r_inv.row(i).dot(&r_inv.row(i))).sqrt())
                    .collect(),
                None => vec![0.0; p],
            }
        } else {
            vec![0.0; p]
        };
        let mut beta = vec![0.0; columns.len() + 1];
        let mut se = vec![0.0; columns.len() + 1];
        beta[0] = solution[0];
        se[0] = se_retained[0];
        for (slot, &orig) in retained.iter().enumerate() {
            beta[orig + 1] = solution[slot + 1];
            se[orig + 1] = se_retained[slot + 1];
        }
        dropped.sort_unstable();
        return FitOutcome { beta, rss, dropped, n_params: p, se };
    }
}

/// AIC = n ln(RSS/n) + 2p, with RSS floored at a tiny fraction of the
/// target's energy so an exact fit stays finite.
fn aic(rss: f64, n: usize, n_params: usize, sum_y_sq: f64) -> f64 {
    let floor = (1e-24 * sum_y_sq).max(f64::MIN_POSITIVE);
    (n as f64) * (rss.max(floor) / n as f64).ln() + 2.0 * n_params as f64
}

/// Fits the stepwise baseline: starting intercept-only, repeatedly adds the
/// predictor group that most decreases AIC, stopping when no addition
/// strictly decreases it. Numeric fit columns and the target are clamped at
/// `z_cap` standard deviations first.
pub fn fit_stepwise(jobs: &[JobRecord], spec: &FeatureSpec) -> Result<LinearModel> {
    spec.validate()?;
    let n = jobs.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "stepwise fit needs at least 10 jobs, got {n}"
        )));
    }
    let dicts = build_dictionaries(jobs, spec);
    let columns = full_columns(&dicts);
    let values: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let raw: Vec<f64> = jobs.iter().map(|j| column_value(c, j)).collect();
            if c.is_numeric() {
                trim_outliers(&raw, spec.z_cap)
            } else {
                raw
            }
        })
        .collect();
    let y = trim_outliers(
        &jobs.iter().map(|j| j.cost_eur).collect::<Vec<f64>>(),
        spec.z_cap,
    );
    let sum_y_sq: f64 = y.iter().map(|v| v * v).sum();

    let group_cols = |g: PredictorGroup| -> Vec<usize> {
        columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.group() == g)
            .map(|(i, _)| i)
            .collect()
    };
    let candidates: Vec<PredictorGroup> = PredictorGroup::ALL
        .into_iter()
        .filter(|&g| !group_cols(g).is_empty())
        .collect();

    let fit_groups = |groups: &[PredictorGroup]| -> (FitOutcome, Vec<usize>) {
        let idx: Vec<usize> = groups.iter().flat_map(|&g| group_cols(g)).collect();
        let cols: Vec<&[f64]> = idx.iter().map(|&i| values[i].as_slice()).collect();
        (fit_least_squares(&cols, &y), idx)
    };

    let mut selected: Vec<PredictorGroup> = Vec::new();
    let (intercept_only, _) = fit_groups(&[]);
    let mut current_aic = aic(intercept_only.rss, n, intercept_only.n_params, sum_y_sq);
    let mut trace = vec![current_aic];
    loop {
        let mut best: Option<(PredictorGroup, f64)> = None;
        for &g in candidates.iter().filter(|g| !selected.contains(g)) {
            let mut trial = selected.clone();
            trial.push(g);
            let width: usize = trial.iter().map(|&g| group_cols(g).len()).sum();
            if width + 1 >= n {
                continue;
            }
            let (outcome, _) = fit_groups(&trial);
            let trial_aic = aic(outcome.rss, n, outcome.n_params, sum_y_sq);
            if best.map_or(true, |(_, a)| trial_aic < a) {
                best = Some((g, trial_aic));
            }
        }
        match best {
            Some((g, a)) if a < current_aic - 1e-12 => {
                selected.push(g);
                current_aic = a;
                trace.push(a);
            }
            _ => break,
        }
    }

    let (outcome, idx) = fit_groups(&selected);
    let coefficients: Vec<Coefficient> = idx
        .iter()
        .enumerate()
        .map(|(slot, &orig)| Coefficient {
            column: columns[orig].clone(),
            value: outcome.beta[slot + 1],
            se: outcome.se[slot + 1],
        })
        .collect();
    let degenerate_columns: Vec<Column> = outcome
        .dropped
        .iter()
        .map(|&slot| columns[idx[slot]].clone())
        .collect();
    Ok(LinearModel {
        selected_groups: selected,
        intercept: outcome.beta[0],
        coefficients,
        aic: current_aic,
        aic_trace: trace,
        dictionaries: dicts,
        degenerate_columns,
        n_training: n,
    })
}

/// Linear prediction for one job from its raw (untrimmed) features; may be
/// non-positive, which the caller handles.
pub fn predict(model: &LinearModel, job: &JobRecord) -> f64 {
    model
        .coefficients
        .iter()
        .fold(model.intercept, |acc, c| acc + c.value * column_value(&c.column, job))
}

/// Elementwise [`predict`] over a batch of jobs.
pub fn predict_batch(model: &LinearModel, jobs: &[JobRecord]) -> Vec<f64> {
    jobs.iter().map(|j| predict(model, j)).collect()
}

/// Combines the analogy and regression estimates by taking the minimum;
/// a non-finite or non-positive estimate defers to the other one.
pub fn combine_min(analogy_estimate: f64, regression_estimate: f64) -> Result<f64> {
    let valid = |v: f64| v.is_finite() && v > 0.0;
    match (valid(analogy_estimate), valid(regression_estimate)) {
        (true, true) => Ok(analogy_estimate.min(regression_estimate)),
        (true, false) => Ok(analogy_estimate),
        (false, true) => Ok(regression_estimate),
        (false, false) => Err(Error::NoValidEstimate),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Direction;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn job(id: u64, load: f64, lat: f64, lng: f64, date: i64, cost: f64) -> JobRecord {
        JobRecord {
            id,
            date,
            collection: GeoPoint { lat, lng },
            delivery: GeoPoint { lat: lat - 1.0, lng: lng + 2.0 },
            load_size: load,
            cost_eur: cost,
            revenue_eur: None,
            direction: Direction::Export,
            collection_country: None,
            delivery_country: None,
        }
    }

    fn with_countries(mut j: JobRecord, cc: &str, dc: &str) -> JobRecord {
        j.collection_country = Some(cc.to_string());
        j.delivery_country = Some(dc.to_string());
        j
    }

    #[test]
    fn rare_categories_merge_into_other() {
        let mut jobs: Vec<JobRecord> = (0..12)
            .map(|i| with_countries(job(i, 0.5, 50.0, 0.0, 0, 100.0), "IE", "GB"))
            .collect();
        for i in 12..15 {
            jobs.push(with_countries(job(i, 0.5, 50.0, 0.0, 0, 100.0), "FR", "GB"));
        }
        let spec = FeatureSpec::default();
        let dicts = build_dictionaries(&jobs, &spec);
        assert_eq!(dicts.collection, vec!["IE"]); // FR seen 3 < 10 merges away
        assert_eq!(dicts.delivery, vec!["GB"]);
        // a rare-label job gets the all-zero OTHER encoding
        let v = build_features(&jobs[13], &dicts);
        assert_eq!(v[3], 0.0);
        // an unseen label at predict time also falls back to OTHER
        let unseen = with_countries(job(99, 0.5, 50.0, 0.0, 0, 100.0), "zz", "GB");
        let v = build_features(&unseen, &dicts);
        assert_eq!(v[3], 0.0);
        assert_eq!(v[4], 1.0);
    }

    #[test]
    fn numeric_features_pass_through_unchanged() {
        let j = job(1, 0.37, 53.0, -6.0, 210, 500.0);
        let dicts = CategoryDictionaries::default();
        let v = build_features(&j, &dicts);
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], 0.37);
        assert_eq!(v[1], haversine_km(&j.collection, &j.delivery));
        assert_eq!(v[2], 210.0);
    }

    #[test]
    fn missing_countries_fall_back_to_grid_cells() {
        let j = job(1, 0.5, 53.3, -6.2, 0, 100.0);
        assert_eq!(collection_label(&j), "cell_55_-5");
        let labeled = with_countries(j, " ie ", "GB");
        assert_eq!(collection_label(&labeled), "IE");
        assert_eq!(delivery_label(&labeled), "GB");
    }

    #[test]
    fn trim_leaves_constant_and_tiny_columns_alone() {
        assert_eq!(trim_outliers(&[4.0, 4.0, 4.0, 4.0], 3.0), vec![4.0; 4]);
        assert_eq!(trim_outliers(&[1.0, 100.0], 3.0), vec![1.0, 100.0]);
        assert_eq!(trim_outliers(&[7.0], 3.0), vec![7.0]);
    }

    #[test]
    fn trim_clamps_a_far_outlier_to_the_cap() {
        // 100 evenly spread values plus one far outlier
        let mut column: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let inlier_mean = column.iter().sum::<f64>() / 100.0;
        let inlier_sd = (column.iter().map(|v| (v - inlier_mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        column.push(inlier_mean + 5.0 * inlier_sd);
        let trimmed = trim_outliers(&column, 3.0);
        // an independent two-pass recomputation of the clamp boundary
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let sd = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let hi = mean + 3.0 * sd;
        assert!(column[100] > hi, "fixture must actually exceed the cap");
        assert_eq!(trimmed[100], hi);
        for i in 0..100 {
            assert_eq!(trimmed[i], column[i], "inlier {i} must pass through");
        }
    }

    #[test]
    fn exact_linear_cost_selects_load_only_and_recovers_coefficients() {
        let jobs: Vec<JobRecord> = (0..50)
            .map(|i| {
                let load = 0.05 + 0.018 * i as f64;
                job(i, load, 50.0, 0.0, (i as i64 * 13) % 400, 5.0 + 3.0 * load)
            })
            .collect();
        let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        assert_eq!(model.selected_groups, vec![PredictorGroup::LoadSize]);
        assert_relative_eq!(model.intercept, 5.0, epsilon = 1e-8);
        assert_eq!(model.coefficients.len(), 1);
        assert_relative_eq!(model.coefficients[0].value, 3.0, epsilon = 1e-8);
        // training predictions reproduce targets
        for j in &jobs {
            assert_relative_eq!(predict(&model, j), j.cost_eur, epsilon = 1e-8);
        }
    }

    #[test]
    fn prediction_is_affine_in_load_and_batch_matches_single() {
        let jobs: Vec<JobRecord> = (0..50)
            .map(|i| {
                let load = 0.05 + 0.018 * i as f64;
                job(i, load, 50.0, 0.0, (i as i64 * 7) % 300, 20.0 + 110.0 * load)
            })
            .collect();
        let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        let a = job(900, 0.30, 50.0, 0.0, 100, 0.0);
        let b = job(901, 0.45, 50.0, 0.0, 100, 0.0);
        let c = job(902, 0.60, 50.0, 0.0, 100, 0.0);
        let (pa, pb, pc) = (predict(&model, &a), predict(&model, &b), predict(&model, &c));
        assert_relative_eq!(pb - pa, pc - pb, epsilon = 1e-9);
        let batch = predict_batch(&model, &[a.clone(), b.clone(), c.clone()]);
        assert_eq!(batch, vec![pa, pb, pc]);
    }

    /// 200 jobs with varied predictors; cost supplied by the closure.
    fn simulated_jobs(
        seed: u64,
        cost: impl Fn(&JobRecord, &mut ChaCha8Rng) -> f64,
    ) -> Vec<JobRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ccs = ["AA", "BB"];
        let dcs = ["XX", "YY", "ZZ"];
        (0..200)
            .map(|i| {
                let mut j = job(
                    i,
                    rng.random_range(0.05..0.95),
                    rng.random_range(45.0..55.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(0..1000),
                    0.0,
                );
                j.collection_country = Some(ccs[rng.random_range(0..ccs.len())].to_string());
                j.delivery_country = Some(dcs[rng.random_range(0..dcs.len())].to_string());
                j.cost_eur = cost(&j, &mut rng);
                j
            })
            .collect()
    }

    #[test]
    fn pure_noise_often_keeps_the_intercept_only_model() {
        // with AIC forward selection some spurious pickups are expected;
        // require the intercept-only outcome in a healthy share of seeds
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut intercept_only = 0;
        for rep in 0..100 {
            let jobs = simulated_jobs(40_000 + rep, |_, rng| 1000.0 + 100.0 * normal.sample(rng));
            let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
            if model.selected_groups.is_empty() {
                intercept_only += 1;
            }
        }
        assert!(
            intercept_only >= 35,
            "intercept-only in {intercept_only}/100 noise repetitions"
        );
    }

    #[test]
    fn planted_signal_is_recovered_with_coefficients_near_truth() {
        // cost = 300 + 800·load + 200·[collection=BB] + noise; the other
        // three groups are pure noise
        let normal = Normal::new(0.0, 50.0).unwrap();
        let truth = |j: &JobRecord| {
            300.0
                + 800.0 * j.load_size
                + if j.collection_country.as_deref() == Some("BB") { 200.0 } else { 0.0 }
        };
        let mut both_selected = 0;
        for rep in 0..100 {
            let jobs = simulated_jobs(70_000 + rep, |j, rng| truth(j) + normal.sample(rng));
            let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
            if model.selected_groups.contains(&PredictorGroup::LoadSize)
                && model.selected_groups.contains(&PredictorGroup::CollectionCountry)
            {
                both_selected += 1;
                // both kept levels get indicators; one is degenerate against
                // the intercept, so effects are relative to the dropped level
                let coef = |label: &str| {
                    model
                        .coefficients
                        .iter()
                        .find(|c| c.column == Column::CollectionCountry(label.into()))
                        .unwrap()
                };
                let load = model
                    .coefficients
                    .iter()
                    .find(|c| c.column == Column::LoadSize)
                    .unwrap();
                assert!(
                    (load.value - 800.0).abs() <= 3.0 * load.se,
                    "rep {rep}: load {} se {}",
                    load.value,
                    load.se
                );
                let (aa, bb) = (coef("AA"), coef("BB"));
                let (contrast, se) = if model
                    .degenerate_columns
                    .contains(&Column::CollectionCountry("BB".into()))
                {
                    (-aa.value, aa.se)
                } else {
                    (bb.value - aa.value, bb.se.max(aa.se) * 2.0)
                };
                assert!(
                    (contrast - 200.0).abs() <= 3.0 * se.max(1e-9),
                    "rep {rep}: contrast {contrast} se {se}"
                );
            }
        }
        assert!(both_selected >= 95, "both groups selected in {both_selected}/100");
    }

    #[test]
    fn aic_trace_strictly_decreases_and_fit_is_deterministic() {
        let jobs = simulated_jobs(5, |j, rng| {
            200.0 + 600.0 * j.load_size + 0.4 * j.date as f64 + 20.0 * rng.random::<f64>()
        });
        let a = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        let b = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.aic_trace.len() >= 2);
        for w in a.aic_trace.windows(2) {
            assert!(w[1] < w[0], "AIC must strictly decrease: {:?}", a.aic_trace);
        }
        assert_eq!(*a.aic_trace.last().unwrap(), a.aic);
        assert_eq!(a.n_training, 200);
    }

    #[test]
    fn degenerate_columns_are_dropped_with_zero_coefficient() {
        // col2 duplicates col0: its pivot collapses and it drops out
        let col0: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let col1: Vec<f64> = (0..20).map(|i| ((i * 7) % 13) as f64).collect();
        let col2 = col0.clone();
        let y: Vec<f64> = (0..20).map(|i| 2.0 + 3.0 * i as f64 + col1[i] * 0.5).collect();
        let outcome = fit_least_squares(&[&col0, &col1, &col2], &y);
        assert_eq!(outcome.dropped, vec![2]);
        assert_eq!(outcome.beta[3], 0.0);
        assert_eq!(outcome.n_params, 3);
        assert_relative_eq!(outcome.beta[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(outcome.beta[1], 3.0, epsilon = 1e-9);
        assert_relative_eq!(outcome.beta[2], 0.5, epsilon = 1e-9);
        assert!(outcome.rss < 1e-18);
    }

    #[test]
    fn collinear_duplicate_categorical_is_never_accepted() {
        // delivery labels mirror collection labels exactly, so once one
        // categorical enters the other is pure redundancy
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let jobs: Vec<JobRecord> = (0..120)
            .map(|i| {
                let cc = if rng.random::<bool>() { "AA" } else { "BB" };
                let mut j = with_countries(
                    job(i, rng.random_range(0.1..0.9), 50.0, 0.0, rng.random_range(0..100), 0.0),
                    cc,
                    cc,
                );
                j.cost_eur = 100.0
                    + if cc == "BB" { 400.0 } else { 0.0 }
                    + rng.random_range(-5.0..5.0);
                j
            })
            .collect();
        let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        let cats: Vec<_> = model
            .selected_groups
            .iter()
            .filter(|g| {
                matches!(
                    g,
                    PredictorGroup::CollectionCountry | PredictorGroup::DeliveryCountry
                )
            })
            .collect();
        assert_eq!(cats.len(), 1, "only one of the mirrored categoricals enters");
    }

    #[test]
    fn too_few_jobs_is_an_error() {
        let jobs: Vec<JobRecord> = (0..9).map(|i| job(i, 0.5, 50.0, 0.0, 0, 100.0)).collect();
        assert!(matches!(
            fit_stepwise(&jobs, &FeatureSpec::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_stepwise(&[], &FeatureSpec { rare_threshold: 0, z_cap: 3.0 }).is_err());
        assert!(fit_stepwise(&[], &FeatureSpec { rare_threshold: 10, z_cap: 0.0 }).is_err());
    }

    #[test]
    fn combine_min_follows_the_fallback_rules() {
        assert_eq!(combine_min(100.0, 80.0).unwrap(), 80.0);
        assert_eq!(combine_min(100.0, -5.0).unwrap(), 100.0);
        assert_eq!(combine_min(-5.0, 100.0).unwrap(), 100.0);
        assert_eq!(combine_min(f64::NAN, 50.0).unwrap(), 50.0);
        assert_eq!(combine_min(50.0, f64::INFINITY).unwrap(), 50.0);
        assert!(combine_min(-1.0, -2.0).is_err());
        assert!(combine_min(f64::NAN, 0.0).is_err());
        // commutative on valid pairs
        for (a, b) in [(10.0, 20.0), (5.0, 5.0), (1e6, 3.0)] {
            assert_eq!(combine_min(a, b).unwrap(), combine_min(b, a).unwrap());
        }
    }

    #[test]
    fn model_json_round_trips() {
        let jobs = simulated_jobs(11, |j, rng| {
            150.0 + 700.0 * j.load_size + 10.0 * rng.random::<f64>()
        });
        let model = fit_stepwise(&jobs, &FeatureSpec::default()).unwrap();
        let back = LinearModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
        // predictions survive the round trip bit-for-bit
        for j in jobs.iter().take(5) {
            assert_eq!(predict(&model, j), predict(&back, j));
        }
    }
}
