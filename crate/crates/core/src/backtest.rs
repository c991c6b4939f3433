//! Walk-forward evaluation harness: chronological cost estimation under a
//! knowledge lag, with per-segment error tables, a weekly error series, a
//! time-trend test, and paired comparison of two runs.
//!
//! The harness is weight-agnostic: an untrained run is simply a trial whose
//! attribute weights are all ones, so the same machinery produces both
//! sides of a trained-vs-untrained comparison.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Direction, GeoPoint, JobRecord, Segmentation};
use crate::knn::{self, AttributeWeights, EstimatorConfig, SolutionWeighting};
use crate::regression;
use crate::stats::{self, ErrorStats, SlopeTest, Tail};
use crate::training::TrainedModel;
use crate::{Error, Result};

/// Default knowledge lag: a pool job must be at least this many days older
/// than the probe before it may inform the estimate.
pub const DEFAULT_LAG_DAYS: i64 = 30;

/// Load-size class labels, smallest class first.
pub const LOAD_CLASS_LABELS: [&str; 3] = [
    "less_than_one_pallet",
    "one_pallet_to_under_half_load",
    "half_load_and_above",
];

/// Region labels in their fixed reporting order.
pub const REGION_LABELS: [&str; 5] = [
    "ireland",
    "united_kingdom",
    "other_eu",
    "other_europe",
    "rest_of_world",
];

/// Configuration of one walk-forward trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// Number of neighbors per estimate; at least 1.
    pub k: usize,
    pub weights: AttributeWeights,
    pub mode: SolutionWeighting,
    /// Minimum age, in days, of pool jobs relative to the probe; >= 0.
    pub lag_days: i64,
    /// When true, test jobs that produced an estimate re-enter the
    /// candidate pool with their actual (invoiced) cost, still subject to
    /// the lag.
    pub include_estimated_test_jobs: bool,
    /// Distances at or below this count as exact matches.
    pub exact_match_epsilon: f64,
    /// Recorded in the report for provenance; estimation itself draws no
    /// random numbers.
    pub seed: u64,
}

impl TrialConfig {
    /// Trial configuration using a trained model's k and weights.
    ///
    /// The solution-weighting mode defaults; override `mode` when the model
    /// was trained under the alternate weighting.
    pub fn trained(model: &TrainedModel) -> TrialConfig {
        TrialConfig {
            k: model.k,
            weights: model.weights,
            ..TrialConfig::untrained(model.k)
        }
    }

    /// Trial configuration with all attribute weights set to one.
    pub fn untrained(k: usize) -> TrialConfig {
        TrialConfig {
            k,
            weights: AttributeWeights::ones(),
            mode: SolutionWeighting::default(),
            lag_days: DEFAULT_LAG_DAYS,
            include_estimated_test_jobs: false,
            exact_match_epsilon: 1e-9,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if self.lag_days < 0 {
            return Err(Error::InvalidParameter(format!(
                "lag_days {} must be >= 0",
                self.lag_days
            )));
        }
        Ok(())
    }

    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            k: self.k,
            weights: self.weights,
            mode: self.mode,
            exact_match_epsilon: self.exact_match_epsilon,
        }
    }
}

/// One estimated test job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub id: u64,
    /// Day number relative to the dataset datum.
    pub date: i64,
    pub estimate_eur: f64,
    pub actual_eur: f64,
    /// Signed error in EUR (estimate - actual).
    pub error_eur: f64,
    /// Signed percentage error.
    pub error_pct: f64,
    pub ape_pct: f64,
    /// Number of eligible pool jobs the estimate drew from.
    pub pool_size: usize,
    /// True when the eligible pool held fewer than k jobs.
    pub underfilled: bool,
    /// True when the exact-match shortcut produced the estimate.
    pub exact_match: bool,
    /// Ids of the neighbors the estimate used, nearest first; these permit
    /// an external audit of the knowledge lag.
    pub neighbor_ids: Vec<u64>,
    /// True when this row's APE exceeds median APE + 10 IQR.
    pub outlier: bool,
}

/// A test job that produced no estimate, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedJob {
    pub id: u64,
    pub date: i64,
    pub reason: String,
}

/// MAPE with standard error and 95% confidence interval, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub mape_pct: f64,
    pub se_pct: f64,
    pub ci_lo_pct: f64,
    pub ci_hi_pct: f64,
}

/// Error summary of one reporting class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub label: String,
    pub n: usize,
    /// None when the class is empty.
    pub stats: Option<SegmentStats>,
}

/// Per-class error tables of one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTables {
    pub load_size: Vec<SegmentRow>,
    pub collection_region: Vec<SegmentRow>,
    pub delivery_region: Vec<SegmentRow>,
    /// Import/export/domestic totals; labels only, they drive no logic.
    pub direction: Vec<SegmentRow>,
}

/// One point of the weekly error series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyPoint {
    /// Weeks elapsed since the first estimated test job.
    pub week: i64,
    pub n: usize,
    pub mape_pct: f64,
}

/// Full result of one walk-forward trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub k: usize,
    pub weights: AttributeWeights,
    pub mode: SolutionWeighting,
    pub lag_days: i64,
    pub include_estimated_test_jobs: bool,
    pub seed: u64,
    /// Estimated test jobs ascending by (date, id).
    pub rows: Vec<TrialRow>,
    pub skipped: Vec<SkippedJob>,
    /// None when every test job was skipped.
    pub overall: Option<ErrorStats>,
    /// Aggregate over non-outlier rows; None when no outlier was flagged.
    pub excluding_outliers: Option<ErrorStats>,
    pub segments: SegmentTables,
    /// OLS trend of APE against date; None when fewer than 3 rows or all
    /// rows share one date.
    pub trend: Option<SlopeTest>,
    pub weekly: Vec<WeeklyPoint>,
    pub outlier_ids: Vec<u64>,
}

impl TrialReport {
    /// Serializes the report as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report serialized by [`TrialReport::to_json`].
    pub fn from_json(text: &str) -> Result<TrialReport> {
        Ok(serde_json::from_str(text)?)
    }
}

enum Outcome {
    Row(TrialRow),
    Skip(SkippedJob),
}

fn estimate_probe(
    pool: &[JobRecord],
    replayed: &[JobRecord],
    probe: &JobRecord,
    cfg: &TrialConfig,
    ecfg: &EstimatorConfig,
) -> Result<Outcome> {
    let cutoff = probe.date - cfg.lag_days;
    let upto = pool.partition_point(|j| j.date <= cutoff);
    let replay_upto = replayed.partition_point(|j| j.date <= cutoff);
    let eligible = upto + replay_upto;
    if eligible == 0 {
        return Ok(Outcome::Skip(SkippedJob {
            id: probe.id,
            date: probe.date,
            reason: "no eligible history".into(),
        }));
    }
    let est = if replay_upto == 0 {
        knn::estimate_cost_detailed(&pool[..upto], probe, ecfg)?
    } else {
        let mut combined = Vec::with_capacity(eligible);
        combined.extend_from_slice(&pool[..upto]);
        combined.extend_from_slice(&replayed[..replay_upto]);
        knn::estimate_cost_detailed(&combined, probe, ecfg)?
    };
    let ape_pct = stats::ape_pct(probe.cost_eur, est.cost_eur)?;
    Ok(Outcome::Row(TrialRow {
        id: probe.id,
        date: probe.date,
        estimate_eur: est.cost_eur,
        actual_eur: probe.cost_eur,
        error_eur: est.cost_eur - probe.cost_eur,
        error_pct: 100.0 * (est.cost_eur - probe.cost_eur) / probe.cost_eur,
        ape_pct,
        pool_size: eligible,
        underfilled: eligible < cfg.k,
        exact_match: est.exact_match,
        neighbor_ids: est.neighbors.iter().map(|n| n.id).collect(),
        outlier: false,
    }))
}

/// Runs one walk-forward trial: test jobs are estimated ascending by
/// (date, id), each from the historical and training jobs dated at least
/// `lag_days` before it (plus earlier estimated test jobs at their actual
/// costs when `include_estimated_test_jobs` is set).
///
/// Jobs with no eligible history are skipped and flagged; pools smaller
/// than k are used and flagged underfilled. With the replay flag off,
/// probes are estimated in parallel; the report is identical either way.
pub fn run_trial(
    segmentation: &Segmentation,
    dataset: &Dataset,
    cfg: &TrialConfig,
) -> Result<TrialReport> {
    cfg.validate()?;
    if segmentation.test.is_empty() {
        return Err(Error::InsufficientData("test segment is empty".into()));
    }
    let mut pool = dataset.select(&segmentation.historical)?;
    pool.extend(dataset.select(&segmentation.training)?);
    pool.sort_unstable_by_key(|j| (j.date, j.id));
    let mut probes = dataset.select(&segmentation.test)?;
    probes.sort_unstable_by_key(|j| (j.date, j.id));

    let ecfg = cfg.estimator();
    let outcomes: Vec<Outcome> = if cfg.include_estimated_test_jobs {
        let mut replayed: Vec<JobRecord> = Vec::with_capacity(probes.len());
        let mut acc = Vec::with_capacity(probes.len());
        for probe in &probes {
            let outcome = estimate_probe(&pool, &replayed, probe, cfg, &ecfg)?;
            if matches!(outcome, Outcome::Row(_)) {
                replayed.push(probe.clone());
            }
            acc.push(outcome);
        }
        acc
    } else {
        probes
            .par_iter()
            .map(|probe| estimate_probe(&pool, &[], probe, cfg, &ecfg))
            .collect::<Result<Vec<_>>>()?
    };

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Row(row) => rows.push(row),
            Outcome::Skip(skip) => skipped.push(skip),
        }
    }

    let apes: Vec<f64> = rows.iter().map(|r| r.ape_pct).collect();
    for (row, flag) in rows.iter_mut().zip(outlier_flags(&apes)?) {
        row.outlier = flag;
    }
    let outlier_ids: Vec<u64> = rows.iter().filter(|r| r.outlier).map(|r| r.id).collect();

    let overall = error_stats_of(rows.iter())?;
    let excluding_outliers = if outlier_ids.is_empty() {
        None
    } else {
        error_stats_of(rows.iter().filter(|r| !r.outlier))?
    };
    let weekly = weekly_points(&rows);
    let trend = trend_of_rows(&rows).ok();
    let segments = tables_from_rows(&rows, dataset)?;

    Ok(TrialReport {
        k: cfg.k,
        weights: cfg.weights,
        mode: cfg.mode,
        lag_days: cfg.lag_days,
        include_estimated_test_jobs: cfg.include_estimated_test_jobs,
        seed: cfg.seed,
        rows,
        skipped,
        overall,
        excluding_outliers,
        segments,
        trend,
        weekly,
        outlier_ids,
    })
}

fn error_stats_of<'a>(rows: impl Iterator<Item = &'a TrialRow>) -> Result<Option<ErrorStats>> {
    let mut actual = Vec::new();
    let mut estimated = Vec::new();
    for row in rows {
        actual.push(row.actual_eur);
        estimated.push(row.estimate_eur);
    }
    if actual.is_empty() {
        return Ok(None);
    }
    Ok(Some(ErrorStats::from_pairs(&actual, &estimated)?))
}

/// Flags values exceeding median + 10 IQR (true per flagged position).
fn outlier_flags(apes: &[f64]) -> Result<Vec<bool>> {
    if apes.is_empty() {
        return Ok(Vec::new());
    }
    let median = stats::percentile(apes, 0.5)?;
    let iqr = stats::percentile(apes, 0.75)? - stats::percentile(apes, 0.25)?;
    let threshold = median + 10.0 * iqr;
    Ok(apes.iter().map(|&a| a > threshold).collect())
}

fn weekly_points(rows: &[TrialRow]) -> Vec<WeeklyPoint> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for row in rows {
        buckets
            .entry((row.date - first.date) / 7)
            .or_default()
            .push(row.ape_pct);
    }
    buckets
        .into_iter()
        .map(|(week, apes)| WeeklyPoint {
            week,
            n: apes.len(),
            mape_pct: apes.iter().sum::<f64>() / apes.len() as f64,
        })
        .collect()
}

fn trend_of_rows(rows: &[TrialRow]) -> Result<SlopeTest> {
    let dates: Vec<f64> = rows.iter().map(|r| r.date as f64).collect();
    let apes: Vec<f64> = rows.iter().map(|r| r.ape_pct).collect();
    stats::ols_slope_test(&dates, &apes)
}

/// OLS trend test of per-job APE against date.
pub fn trend_test(report: &TrialReport) -> Result<SlopeTest> {
    trend_of_rows(&report.rows)
}

/// The weekly MAPE series (empty weeks omitted) and the flagged outlier
/// job ids.
pub fn weekly_mape_series(report: &TrialReport) -> (Vec<WeeklyPoint>, Vec<u64>) {
    let outliers = report
        .rows
        .iter()
        .filter(|r| r.outlier)
        .map(|r| r.id)
        .collect();
    (weekly_points(&report.rows), outliers)
}

/// EU member countries (current EU-27, Ireland listed separately).
const EU_MEMBERS: [&str; 26] = [
    "AT", "BE", "BG", "CY", "CZ", "DE", "DK", "EE", "ES", "FI", "FR", "GR", "HR", "HU", "IT",
    "LT", "LU", "LV", "MT", "NL", "PL", "PT", "RO", "SE", "SI", "SK",
];

/// European countries and territories outside the EU and the UK.
const OTHER_EUROPE: [&str; 24] = [
    "AD", "AL", "BA", "BY", "CH", "FO", "GG", "GI", "IM", "IS", "JE", "LI", "MC", "MD", "ME",
    "MK", "NO", "RS", "RU", "SM", "TR", "UA", "VA", "XK",
];

/// Geographic reporting group of one endpoint.
///
/// Labeled endpoints map to one of the five region groups in
/// [`REGION_LABELS`] (EU membership per the current EU-27; the grouping is
/// a reporting convenience, not a political statement). Unlabeled
/// endpoints fall back to the same coarse 5-degree grid cells the
/// regression features use, so a label-free dataset still partitions into
/// geographic groups.
pub fn endpoint_region(country: Option<&str>, point: &GeoPoint) -> String {
    let label = regression::endpoint_label(country, point);
    if label.starts_with("cell_") {
        return label;
    }
    match label.as_str() {
        "IE" => "ireland",
        "GB" | "UK" => "united_kingdom",
        c if EU_MEMBERS.contains(&c) => "other_eu",
        c if OTHER_EUROPE.contains(&c) => "other_europe",
        _ => "rest_of_world",
    }
    .to_string()
}

fn load_class_index(load_size: f64) -> usize {
    if load_size < 1.0 / 26.0 {
        0
    } else if load_size < 0.5 {
        1
    } else {
        2
    }
}

fn class_stats(apes: &[f64]) -> Result<Option<SegmentStats>> {
    match apes.len() {
        0 => Ok(None),
        1 => Ok(Some(SegmentStats {
            mape_pct: apes[0],
            se_pct: 0.0,
            ci_lo_pct: apes[0],
            ci_hi_pct: apes[0],
        })),
        _ => {
            let ci = stats::mean_ci(apes, 0.95)?;
            Ok(Some(SegmentStats {
                mape_pct: ci.mean,
                se_pct: ci.se,
                ci_lo_pct: ci.lo,
                ci_hi_pct: ci.hi,
            }))
        }
    }
}

fn segment_row(label: &str, apes: &[f64]) -> Result<SegmentRow> {
    Ok(SegmentRow {
        label: label.to_string(),
        n: apes.len(),
        stats: class_stats(apes)?,
    })
}

/// The five named regions in fixed order, then any grid-cell groups in
/// sorted order.
fn region_rows(mut groups: BTreeMap<String, Vec<f64>>) -> Result<Vec<SegmentRow>> {
    let mut rows = Vec::with_capacity(groups.len().max(REGION_LABELS.len()));
    for label in REGION_LABELS {
        let apes = groups.remove(label).unwrap_or_default();
        rows.push(segment_row(label, &apes)?);
    }
    for (label, apes) in groups {
        rows.push(segment_row(&label, &apes)?);
    }
    Ok(rows)
}

fn tables_from_rows(rows: &[TrialRow], dataset: &Dataset) -> Result<SegmentTables> {
    let mut load: [Vec<f64>; 3] = Default::default();
    let mut direction: BTreeMap<Direction, Vec<f64>> = BTreeMap::new();
    let mut collection: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut delivery: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in rows {
        let job = dataset.get(row.id).ok_or_else(|| {
            Error::MismatchedReports(format!("report job {} is not in the dataset", row.id))
        })?;
        load[load_class_index(job.load_size)].push(row.ape_pct);
        direction.entry(job.direction).or_default().push(row.ape_pct);
        collection
            .entry(endpoint_region(
                job.collection_country.as_deref(),
                &job.collection,
            ))
            .or_default()
            .push(row.ape_pct);
        delivery
            .entry(endpoint_region(
                job.delivery_country.as_deref(),
                &job.delivery,
            ))
            .or_default()
            .push(row.ape_pct);
    }
    let mut load_rows = Vec::with_capacity(3);
    for (label, apes) in LOAD_CLASS_LABELS.iter().zip(&load) {
        load_rows.push(segment_row(label, apes)?);
    }
    let mut direction_rows = Vec::with_capacity(3);
    for dir in Direction::ALL {
        let apes = direction.remove(&dir).unwrap_or_default();
        direction_rows.push(segment_row(dir.label(), &apes)?);
    }
    Ok(SegmentTables {
        load_size: load_rows,
        collection_region: region_rows(collection)?,
        delivery_region: region_rows(delivery)?,
        direction: direction_rows,
    })
}

/// Rebuilds the per-class error tables of a report against its dataset.
///
/// Empty classes report n = 0; errors only when a report row's job id is
/// missing from the dataset.
pub fn segment_error_report(report: &TrialReport, dataset: &Dataset) -> Result<SegmentTables> {
    tables_from_rows(&report.rows, dataset)
}

/// Paired comparison of two trial reports over the same test jobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k: usize,
    pub trained_mape_pct: f64,
    pub untrained_mape_pct: f64,
    /// Mean per-job APE difference (untrained - trained), in points.
    pub mean_diff_pct: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// True when the test rejects equality at the 95% level.
    pub reject_at_95: bool,
    /// True when the rejection favors the trained run.
    pub trained_is_better: bool,
}

/// Paired t-test of per-job APEs between a trained and an untrained run.
///
/// The difference is taken as untrained - trained, so with
/// [`Tail::Greater`] the alternative is "training lowered the error".
/// Errors when the reports cover different jobs or ks.
pub fn compare_reports(
    trained: &TrialReport,
    untrained: &TrialReport,
    tail: Tail,
) -> Result<Comparison> {
    if trained.k != untrained.k {
        return Err(Error::MismatchedReports(format!(
            "k {} vs {}",
            trained.k, untrained.k
        )));
    }
    if trained.rows.len() != untrained.rows.len() {
        return Err(Error::MismatchedReports(format!(
            "{} rows vs {}",
            trained.rows.len(),
            untrained.rows.len()
        )));
    }
    for (a, b) in trained.rows.iter().zip(&untrained.rows) {
        if a.id != b.id {
            return Err(Error::MismatchedReports(format!(
                "row ids {} vs {}",
                a.id, b.id
            )));
        }
    }
    let trained_apes: Vec<f64> = trained.rows.iter().map(|r| r.ape_pct).collect();
    let untrained_apes: Vec<f64> = untrained.rows.iter().map(|r| r.ape_pct).collect();
    let test = stats::paired_t_test(&untrained_apes, &trained_apes, tail)?;
    let n = trained_apes.len() as f64;
    let reject_at_95 = test.p < 0.05;
    Ok(Comparison {
        k: trained.k,
        trained_mape_pct: trained_apes.iter().sum::<f64>() / n,
        untrained_mape_pct: untrained_apes.iter().sum::<f64>() / n,
        mean_diff_pct: test.mean_diff,
        t: test.t,
        p: test.p,
        df: test.df,
        reject_at_95,
        trained_is_better: reject_at_95 && test.mean_diff > 0.0,
    })
}

/// Per-job rows as CSV, with ISO dates resolved against the dataset datum.
pub fn rows_to_csv(report: &TrialReport, dataset: &Dataset) -> String {
    let mut out = String::from(
        "id,date,estimate_eur,actual_eur,error_eur,error_pct,ape_pct,\
         pool_size,underfilled,exact_match,outlier\n",
    );
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.id,
            dataset.day_to_date(row.date).format("%Y-%m-%d"),
            row.estimate_eur,
            row.actual_eur,
            row.error_eur,
            row.error_pct,
            row.ape_pct,
            row.pool_size,
            row.underfilled,
            row.exact_match,
            row.outlier,
        ));
    }
    out
}

/// Weekly MAPE series as CSV.
pub fn weekly_to_csv(report: &TrialReport) -> String {
    let mut out = String::from("week,n,mape_pct\n");
    for point in &report.weekly {
        out.push_str(&format!("{},{},{}\n", point.week, point.n, point.mape_pct));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::default_datum;
    use crate::synth;
    use approx::assert_relative_eq;

    fn job(id: u64, date: i64, lat: f64, lng: f64, load: f64, cost: f64) -> JobRecord {
        JobRecord {
            id,
            date,
            collection: GeoPoint { lat, lng },
            delivery: GeoPoint {
                lat: lat - 2.0,
                lng: lng + 3.0,
            },
            load_size: load,
            cost_eur: cost,
            revenue_eur: None,
            direction: Direction::Export,
            collection_country: None,
            delivery_country: None,
        }
    }

    fn dataset(jobs: Vec<JobRecord>) -> Dataset {
        Dataset::new(jobs, default_datum()).unwrap()
    }

    fn split(historical: &[u64], training: &[u64], test: &[u64]) -> Segmentation {
        let sorted = |ids: &[u64]| {
            let mut v = ids.to_vec();
            v.sort_unstable();
            v
        };
        Segmentation {
            seed: 0,
            historical_share: 0.8,
            test: sorted(test),
            historical: sorted(historical),
            training: sorted(training),
        }
    }

    #[test]
    fn exact_duplicate_31_days_older_gives_zero_ape() {
        let pool_job = job(1, 0, 53.0, -6.0, 0.5, 800.0);
        let mut probe = job(2, 31, 53.0, -6.0, 0.5, 800.0);
        probe.date = 31;
        let ds = dataset(vec![pool_job, probe]);
        let seg = split(&[1], &[], &[2]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        // the date attribute is not an exact match, but the estimate is:
        // a like-for-like job 31 days earlier reproduces its cost
        assert_eq!(row.estimate_eur, 800.0);
        assert_eq!(row.ape_pct, 0.0);
        assert!(!row.underfilled);
        assert_eq!(row.neighbor_ids, vec![1]);
    }

    #[test]
    fn probe_with_only_too_recent_history_is_skipped() {
        let ds = dataset(vec![
            job(1, 25, 53.0, -6.0, 0.5, 800.0),
            job(2, 35, 53.0, -6.0, 0.5, 800.0),
        ]);
        let seg = split(&[1], &[], &[2]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].id, 2);
        assert_eq!(report.skipped[0].reason, "no eligible history");
        assert!(report.overall.is_none());
        assert!(report.trend.is_none());
        assert!(report.weekly.is_empty());
    }

    #[test]
    fn empty_test_segment_errors() {
        let ds = dataset(vec![job(1, 0, 53.0, -6.0, 0.5, 800.0)]);
        let seg = split(&[1], &[], &[]);
        let err = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn invalid_config_errors() {
        let ds = dataset(vec![
            job(1, 0, 53.0, -6.0, 0.5, 800.0),
            job(2, 40, 53.0, -6.0, 0.5, 800.0),
        ]);
        let seg = split(&[1], &[], &[2]);
        let mut zero_k = TrialConfig::untrained(1);
        zero_k.k = 0;
        assert!(run_trial(&seg, &ds, &zero_k).is_err());
        let mut negative_lag = TrialConfig::untrained(1);
        negative_lag.lag_days = -1;
        assert!(run_trial(&seg, &ds, &negative_lag).is_err());
    }

    fn synthetic_run(k: usize) -> (Dataset, Segmentation, TrialReport) {
        let spec = synth::SyntheticSpec::example(120, 9);
        let ds = synth::generate(&spec).unwrap();
        let seg = crate::domain::segment(&ds, 7, 0.8).unwrap();
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(k)).unwrap();
        (ds, seg, report)
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let spec = synth::SyntheticSpec::example(80, 3);
        let ds = synth::generate(&spec).unwrap();
        let seg = crate::domain::segment(&ds, 5, 0.8).unwrap();
        let cfg = TrialConfig::untrained(3);
        let a = run_trial(&seg, &ds, &cfg).unwrap();
        let b = run_trial(&seg, &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_estimate_uses_history_newer_than_the_lag() {
        let (ds, seg, report) = synthetic_run(3);
        assert!(!report.rows.is_empty());
        let mut pool = ds.select(&seg.historical).unwrap();
        pool.extend(ds.select(&seg.training).unwrap());
        let cfg = TrialConfig::untrained(3);
        for row in &report.rows {
            // every neighbor respects the lag
            for nid in &row.neighbor_ids {
                let neighbor = ds.get(*nid).unwrap();
                assert!(neighbor.date <= row.date - cfg.lag_days);
            }
            // and the estimate is reproducible from a brute-force filter
            let eligible: Vec<JobRecord> = pool
                .iter()
                .filter(|j| j.date <= row.date - cfg.lag_days)
                .cloned()
                .collect();
            assert_eq!(eligible.len(), row.pool_size);
            let redo =
                knn::estimate_cost(&eligible, ds.get(row.id).unwrap(), &cfg.estimator()).unwrap();
            assert_eq!(redo, row.estimate_eur);
        }
        for skip in &report.skipped {
            assert!(pool.iter().all(|j| j.date > skip.date - cfg.lag_days));
        }
    }

    #[test]
    fn report_mape_is_recomputable_from_rows() {
        let (_, _, report) = synthetic_run(3);
        let actual: Vec<f64> = report.rows.iter().map(|r| r.actual_eur).collect();
        let estimated: Vec<f64> = report.rows.iter().map(|r| r.estimate_eur).collect();
        let recomputed = stats::mape(&actual, &estimated).unwrap();
        assert_eq!(report.overall.as_ref().unwrap().mape_pct, recomputed);
        // row order is ascending (date, id)
        for pair in report.rows.windows(2) {
            assert!((pair[0].date, pair[0].id) < (pair[1].date, pair[1].id));
        }
        // rows + skips partition the test segment
        assert_eq!(
            report.rows.len() + report.skipped.len(),
            synthetic_run(3).1.test.len()
        );
    }

    #[test]
    fn zero_lag_duplicate_same_day_gives_zero_ape() {
        let ds = dataset(vec![
            job(1, 10, 53.0, -6.0, 0.5, 640.0),
            job(2, 10, 53.0, -6.0, 0.5, 640.0),
        ]);
        let seg = split(&[1], &[], &[2]);
        let mut cfg = TrialConfig::untrained(1);
        cfg.lag_days = 0;
        let report = run_trial(&seg, &ds, &cfg).unwrap();
        assert_eq!(report.rows[0].ape_pct, 0.0);
        assert!(report.rows[0].exact_match);
    }

    #[test]
    fn underfilled_pool_is_used_and_flagged() {
        let ds = dataset(vec![
            job(1, 0, 53.0, -6.0, 0.5, 800.0),
            job(2, 1, 53.1, -6.1, 0.6, 900.0),
            job(3, 60, 53.0, -6.0, 0.5, 820.0),
        ]);
        let seg = split(&[1, 2], &[], &[3]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(5)).unwrap();
        let row = &report.rows[0];
        assert!(row.underfilled);
        assert_eq!(row.pool_size, 2);
        assert_eq!(row.neighbor_ids.len(), 2);
        assert!(row.estimate_eur.is_finite());
    }

    #[test]
    fn estimated_test_jobs_reenter_with_actual_cost() {
        // the only permanent pool job is far from the probes in cost
        let pool_job = job(1, 0, 53.0, -6.0, 1.0, 1000.0);
        // two identical far-away test jobs, 40 days apart
        let t1 = job(10, 40, 45.0, 10.0, 1.0, 5000.0);
        let t2 = job(11, 80, 45.0, 10.0, 1.0, 5000.0);
        let ds = dataset(vec![pool_job, t1, t2]);
        let seg = split(&[1], &[], &[10, 11]);

        let strict = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap();
        assert_eq!(strict.rows[1].estimate_eur, 1000.0);

        let mut cfg = TrialConfig::untrained(1);
        cfg.include_estimated_test_jobs = true;
        let replay = run_trial(&seg, &ds, &cfg).unwrap();
        // the second job now exact-matches the first at its ACTUAL cost,
        // not at the 1000 EUR estimate the method produced for it
        assert_eq!(replay.rows[0].estimate_eur, 1000.0);
        assert_eq!(replay.rows[1].estimate_eur, 5000.0);
        assert_eq!(replay.rows[1].ape_pct, 0.0);
        assert_eq!(replay.rows[1].neighbor_ids, vec![10]);
    }

    #[test]
    fn replayed_test_jobs_still_respect_the_lag() {
        let pool_job = job(1, 0, 53.0, -6.0, 1.0, 1000.0);
        let t1 = job(10, 40, 45.0, 10.0, 1.0, 5000.0);
        // only 10 days after t1: t1 must NOT be eligible despite the flag
        let t2 = job(11, 50, 45.0, 10.0, 1.0, 5000.0);
        let ds = dataset(vec![pool_job, t1, t2]);
        let seg = split(&[1], &[], &[10, 11]);
        let mut cfg = TrialConfig::untrained(1);
        cfg.include_estimated_test_jobs = true;
        let report = run_trial(&seg, &ds, &cfg).unwrap();
        assert_eq!(report.rows[1].estimate_eur, 1000.0);
        assert_eq!(report.rows[1].neighbor_ids, vec![1]);
    }

    #[test]
    fn untrained_config_equals_explicit_ones_weights() {
        let (ds, seg, untrained) = synthetic_run(4);
        let explicit = TrialConfig {
            k: 4,
            weights: AttributeWeights::new(1.0, 1.0, 1.0, 1.0).unwrap(),
            ..TrialConfig::untrained(4)
        };
        let report = run_trial(&seg, &ds, &explicit).unwrap();
        assert_eq!(report, untrained);
    }

    #[test]
    fn single_load_class_matches_overall_mape() {
        let jobs: Vec<JobRecord> = (0..8)
            .map(|i| job(i, 10 * i as i64, 53.0, -6.0, 0.03, 500.0 + 7.0 * i as f64))
            .collect();
        let ds = dataset(jobs);
        let seg = split(&[0, 1, 2, 3], &[], &[4, 5, 6, 7]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(2)).unwrap();
        let table = &report.segments.load_size;
        // load 0.03 < 1/26 falls in the smallest class
        assert_eq!(table[0].label, "less_than_one_pallet");
        assert_eq!(table[0].n, report.rows.len());
        assert_eq!(table[1].n, 0);
        assert!(table[1].stats.is_none());
        assert_eq!(table[2].n, 0);
        assert_eq!(
            table[0].stats.unwrap().mape_pct,
            report.overall.as_ref().unwrap().mape_pct
        );
    }

    #[test]
    fn load_class_boundaries_are_half_open() {
        assert_eq!(load_class_index(0.03), 0);
        assert_eq!(load_class_index(1.0 / 26.0), 1);
        assert_eq!(load_class_index(0.49), 1);
        assert_eq!(load_class_index(0.5), 2);
        assert_eq!(load_class_index(1.0), 2);
    }

    #[test]
    fn class_counts_partition_the_rows() {
        let (ds, _, report) = synthetic_run(3);
        let n = report.rows.len();
        let tables = segment_error_report(&report, &ds).unwrap();
        for table in [
            &tables.load_size,
            &tables.collection_region,
            &tables.delivery_region,
            &tables.direction,
        ] {
            assert_eq!(table.iter().map(|r| r.n).sum::<usize>(), n);
        }
    }

    #[test]
    fn labeled_endpoints_map_to_named_regions() {
        let dublin = GeoPoint { lat: 53.35, lng: -6.26 };
        assert_eq!(endpoint_region(Some("IE"), &dublin), "ireland");
        assert_eq!(endpoint_region(Some(" ie "), &dublin), "ireland");
        assert_eq!(endpoint_region(Some("GB"), &dublin), "united_kingdom");
        assert_eq!(endpoint_region(Some("UK"), &dublin), "united_kingdom");
        assert_eq!(endpoint_region(Some("FR"), &dublin), "other_eu");
        assert_eq!(endpoint_region(Some("nl"), &dublin), "other_eu");
        assert_eq!(endpoint_region(Some("NO"), &dublin), "other_europe");
        assert_eq!(endpoint_region(Some("CH"), &dublin), "other_europe");
        assert_eq!(endpoint_region(Some("CN"), &dublin), "rest_of_world");
        assert_eq!(endpoint_region(Some("US"), &dublin), "rest_of_world");
    }

    #[test]
    fn unlabeled_endpoints_fall_back_to_grid_cells() {
        let dublin = GeoPoint { lat: 53.35, lng: -6.26 };
        assert_eq!(endpoint_region(None, &dublin), "cell_55_-5");
        assert_eq!(endpoint_region(Some("  "), &dublin), "cell_55_-5");
        // cells appear in the region tables after the named groups
        let ds = dataset(vec![
            job(1, 0, 53.0, -6.0, 0.5, 800.0),
            job(2, 40, 53.0, -6.0, 0.5, 800.0),
        ]);
        let seg = split(&[1], &[], &[2]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap();
        let table = &report.segments.collection_region;
        assert_eq!(table.len(), 6);
        assert_eq!(table[5].label, "cell_55_-5");
        assert_eq!(table[5].n, 1);
        assert!(REGION_LABELS.iter().all(|l| table.iter().any(|r| &r.label == l)));
    }

    fn fake_report(points: &[(i64, f64)]) -> TrialReport {
        let rows: Vec<TrialRow> = points
            .iter()
            .enumerate()
            .map(|(i, &(date, ape))| TrialRow {
                id: i as u64,
                date,
                estimate_eur: 100.0 + ape,
                actual_eur: 100.0,
                error_eur: ape,
                error_pct: ape,
                ape_pct: ape,
                pool_size: 1,
                underfilled: false,
                exact_match: false,
                neighbor_ids: vec![0],
                outlier: false,
            })
            .collect();
        TrialReport {
            k: 1,
            weights: AttributeWeights::ones(),
            mode: SolutionWeighting::default(),
            lag_days: DEFAULT_LAG_DAYS,
            include_estimated_test_jobs: false,
            seed: 0,
            rows,
            skipped: Vec::new(),
            overall: None,
            excluding_outliers: None,
            segments: SegmentTables {
                load_size: Vec::new(),
                collection_region: Vec::new(),
                delivery_region: Vec::new(),
                direction: Vec::new(),
            },
            trend: None,
            weekly: Vec::new(),
            outlier_ids: Vec::new(),
        }
    }

    #[test]
    fn constant_ape_has_no_trend() {
        let report = fake_report(&[(0, 5.0), (10, 5.0), (20, 5.0), (30, 5.0)]);
        let trend = trend_test(&report).unwrap();
        assert_eq!(trend.slope, 0.0);
        assert_eq!(trend.p, 1.0);
        assert!(!trend.reject_zero_slope);
    }

    #[test]
    fn perfectly_linear_ape_rejects_zero_trend() {
        let points: Vec<(i64, f64)> = (0..10).map(|d| (d, 0.01 * d as f64)).collect();
        let report = fake_report(&points);
        let trend = trend_test(&report).unwrap();
        assert_relative_eq!(trend.slope, 0.01, max_relative = 1e-12);
        assert_eq!(trend.p, 0.0);
        assert!(trend.reject_zero_slope);
    }

    #[test]
    fn trend_test_delegates_to_the_slope_test() {
        let (_, _, report) = synthetic_run(3);
        let dates: Vec<f64> = report.rows.iter().map(|r| r.date as f64).collect();
        let apes: Vec<f64> = report.rows.iter().map(|r| r.ape_pct).collect();
        let direct = stats::ols_slope_test(&dates, &apes).unwrap();
        assert_eq!(report.trend.unwrap(), direct);
        assert_eq!(trend_test(&report).unwrap(), direct);
    }

    #[test]
    fn weekly_series_buckets_by_seven_days_and_omits_empty_weeks() {
        let report = fake_report(&[(0, 2.0), (3, 4.0), (6, 6.0), (70, 8.0), (72, 10.0)]);
        let (points, outliers) = weekly_mape_series(&report);
        assert!(outliers.is_empty());
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].week, 0);
        assert_eq!(points[0].n, 3);
        assert_relative_eq!(points[0].mape_pct, 4.0);
        assert_eq!(points[1].week, 10);
        assert_eq!(points[1].n, 2);
        assert_relative_eq!(points[1].mape_pct, 9.0);
    }

    #[test]
    fn one_week_of_jobs_gives_a_single_point_equal_to_overall() {
        let (ds, _, _) = synthetic_run(1);
        // re-date a copy of some jobs into one week
        let mut jobs: Vec<JobRecord> = ds.jobs()[..12].to_vec();
        for (i, j) in jobs.iter_mut().enumerate() {
            j.id = i as u64 + 1;
            j.date = if i < 6 { 0 } else { 40 + (i as i64 % 6) };
        }
        let ds = dataset(jobs);
        let seg = split(&[1, 2, 3, 4, 5, 6], &[], &[7, 8, 9, 10, 11, 12]);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(2)).unwrap();
        assert_eq!(report.weekly.len(), 1);
        assert_eq!(report.weekly[0].n, report.rows.len());
        assert_eq!(
            report.weekly[0].mape_pct,
            report.overall.as_ref().unwrap().mape_pct
        );
    }

    #[test]
    fn extreme_ape_is_flagged_and_excluded_aggregate_reported() {
        // nine probes with small varied errors, one catastrophically wrong
        let mut jobs = vec![job(1, 0, 53.0, -6.0, 1.0, 1000.0)];
        for i in 0..9 {
            jobs.push(job(
                10 + i,
                40 + i as i64,
                53.0,
                -6.0,
                1.0,
                1000.0 * (1.0 + 0.01 * (i as f64 + 1.0)),
            ));
        }
        // actual cost 1 EUR, estimated from the 1000 EUR neighbor
        jobs.push(job(30, 60, 53.0, -6.0, 1.0, 1.0));
        let ds = dataset(jobs);
        let test_ids: Vec<u64> = (10..19).chain([30]).collect();
        let seg = split(&[1], &[], &test_ids);
        let report = run_trial(&seg, &ds, &TrialConfig::untrained(1)).unwrap();
        assert_eq!(report.outlier_ids, vec![30]);
        let flagged: Vec<u64> = report
            .rows
            .iter()
            .filter(|r| r.outlier)
            .map(|r| r.id)
            .collect();
        assert_eq!(flagged, vec![30]);
        let overall = report.overall.as_ref().unwrap();
        let excluding = report.excluding_outliers.as_ref().unwrap();
        assert_eq!(excluding.n, overall.n - 1);
        assert!(excluding.mape_pct < overall.mape_pct / 100.0);
    }

    #[test]
    fn no_outliers_means_no_excluded_aggregate() {
        let (_, _, report) = synthetic_run(3);
        if report.outlier_ids.is_empty() {
            assert!(report.excluding_outliers.is_none());
        } else {
            assert!(report.excluding_outliers.is_some());
        }
    }

    #[test]
    fn identical_reports_compare_as_equal() {
        let (_, _, report) = synthetic_run(2);
        let cmp = compare_reports(&report, &report, Tail::TwoSided).unwrap();
        assert_eq!(cmp.t, 0.0);
        assert_eq!(cmp.p, 1.0);
        assert_eq!(cmp.mean_diff_pct, 0.0);
        assert!(!cmp.reject_at_95);
        assert!(!cmp.trained_is_better);
    }

    #[test]
    fn uniformly_worse_untrained_run_rejects_in_favor_of_trained() {
        let (_, _, trained) = synthetic_run(2);
        let mut untrained = trained.clone();
        for row in &mut untrained.rows {
            row.ape_pct += 10.0;
        }
        let cmp = compare_reports(&trained, &untrained, Tail::Greater).unwrap();
        assert_eq!(cmp.p, 0.0);
        assert_eq!(cmp.mean_diff_pct, 10.0);
        assert!(cmp.reject_at_95);
        assert!(cmp.trained_is_better);
        assert_relative_eq!(
            cmp.untrained_mape_pct,
            cmp.trained_mape_pct + 10.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn comparison_delegates_to_the_paired_t_test() {
        let (ds, seg, untrained) = synthetic_run(2);
        let mut cfg = TrialConfig::untrained(2);
        cfg.weights = AttributeWeights::new(0.5, 0.5, 0.1, 2.0).unwrap();
        let trained = run_trial(&seg, &ds, &cfg).unwrap();
        let cmp = compare_reports(&trained, &untrained, Tail::Greater).unwrap();
        let t_apes: Vec<f64> = trained.rows.iter().map(|r| r.ape_pct).collect();
        let u_apes: Vec<f64> = untrained.rows.iter().map(|r| r.ape_pct).collect();
        let direct = stats::paired_t_test(&u_apes, &t_apes, Tail::Greater).unwrap();
        assert_eq!(cmp.t, direct.t);
        assert_eq!(cmp.p, direct.p);
        assert_eq!(cmp.df, direct.df);
        assert_eq!(cmp.mean_diff_pct, direct.mean_diff);
    }

    #[test]
    fn mismatched_reports_error() {
        let (_, _, report) = synthetic_run(2);
        let mut shorter = report.clone();
        shorter.rows.pop();
        assert!(matches!(
            compare_reports(&report, &shorter, Tail::TwoSided),
            Err(Error::MismatchedReports(_))
        ));
        let mut other_ids = report.clone();
        other_ids.rows[0].id += 100_000;
        assert!(matches!(
            compare_reports(&report, &other_ids, Tail::TwoSided),
            Err(Error::MismatchedReports(_))
        ));
        let mut other_k = report.clone();
        other_k.k += 1;
        assert!(matches!(
            compare_reports(&report, &other_k, Tail::TwoSided),
            Err(Error::MismatchedReports(_))
        ));
    }

    #[test]
    fn report_json_round_trips() {
        let (_, _, report) = synthetic_run(2);
        let text = report.to_json().unwrap();
        let back = TrialReport::from_json(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_exports_cover_all_rows_and_weeks() {
        let (ds, _, report) = synthetic_run(2);
        let rows_csv = rows_to_csv(&report, &ds);
        let lines: Vec<&str> = rows_csv.lines().collect();
        assert_eq!(lines.len(), report.rows.len() + 1);
        assert!(lines[0].starts_with("id,date,estimate_eur"));
        assert!(lines[1].contains("20"));
        let weekly_csv = weekly_to_csv(&report);
        assert_eq!(weekly_csv.lines().count(), report.weekly.len() + 1);
        assert!(weekly_csv.starts_with("week,n,mape_pct\n"));
    }
}
