//! Labor-cost economics: deriving the manual estimators' error profile from
//! booked cost/revenue pairs, and a Monte Carlo bidding simulation of the
//! per-job labor cost at which manual estimation and the analogy method
//! yield the same expected profit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::JobRecord;
use crate::stats;
use crate::{Error, Result};

/// Error profile of the incumbent manual estimation process.
///
/// Derived from booked costs and revenues under the assumption that the
/// firm quotes every job at cost estimate times (1 + t) for one target
/// margin t; the estimation errors are whatever signed residuals make the
/// margin come out right on average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualErrorProfile {
    /// Target gross margin fraction; the value at which the mean signed
    /// estimation error is zero.
    pub t: f64,
    /// Per-job signed estimation errors in EUR; they sum to zero up to
    /// rounding (the defining condition).
    pub errors_eur: Vec<f64>,
    /// Per-job signed estimation errors as a percentage of actual cost.
    pub errors_pct: Vec<f64>,
    pub n: usize,
    pub mean_error_pct: f64,
    pub mape_pct: f64,
    pub q3_ape_pct: f64,
    pub std_dev_pct: f64,
}

/// Solves for the manual estimators' error profile from (cost, revenue)
/// pairs: the target margin t = sum(R)/sum(C) - 1 is the closed form of
/// "mean signed error is zero", and each job's error is
/// e_i = (R_i - C_i(1+t)) / (1+t).
pub fn derive_manual_margin(pairs: &[(f64, f64)]) -> Result<ManualErrorProfile> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData(
            "margin derivation needs at least one (cost, revenue) pair".into(),
        ));
    }
    let mut sum_cost = 0.0;
    let mut sum_revenue = 0.0;
    for &(cost, revenue) in pairs {
        if !cost.is_finite() || cost <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cost {cost} must be finite and > 0"
            )));
        }
        if !revenue.is_finite() || revenue < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "revenue {revenue} must be finite and >= 0"
            )));
        }
        sum_cost += cost;
        sum_revenue += revenue;
    }
    let t = sum_revenue / sum_cost - 1.0;
    if 1.0 + t <= 0.0 {
        return Err(Error::InvalidParameter(
            "total revenue is zero: margin t = -1 leaves the error system degenerate".into(),
        ));
    }
    let errors_eur: Vec<f64> = pairs
        .iter()
        .map(|&(cost, revenue)| (revenue - cost * (1.0 + t)) / (1.0 + t))
        .collect();
    let errors_pct: Vec<f64> = errors_eur
        .iter()
        .zip(pairs)
        .map(|(&e, &(cost, _))| 100.0 * e / cost)
        .collect();
    let n = pairs.len();
    let mean_error_pct = errors_pct.iter().sum::<f64>() / n as f64;
    let apes: Vec<f64> = errors_pct.iter().map(|e| e.abs()).collect();
    let mape_pct = apes.iter().sum::<f64>() / n as f64;
    let q3_ape_pct = stats::percentile(&apes, 0.75)?;
    let std_dev_pct = if n >= 2 {
        (errors_pct
            .iter()
            .map(|e| (e - mean_error_pct).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(ManualErrorProfile {
        t,
        errors_eur,
        errors_pct,
        n,
        mean_error_pct,
        mape_pct,
        q3_ape_pct,
        std_dev_pct,
    })
}

/// Derives the manual error profile from the jobs that carry revenue.
///
/// Jobs without revenue are ignored; errors when none carry it.
pub fn derive_manual_margin_from_jobs(jobs: &[JobRecord]) -> Result<ManualErrorProfile> {
    let pairs: Vec<(f64, f64)> = jobs
        .iter()
        .filter_map(|j| j.revenue_eur.map(|r| (j.cost_eur, r)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData(
            "no job carries revenue; cannot derive the manual margin".into(),
        ));
    }
    derive_manual_margin(&pairs)
}

fn default_bidders() -> usize {
    3
}

fn default_margin() -> f64 {
    0.151
}

fn default_trials() -> usize {
    25_000
}

fn default_true() -> bool {
    true
}

/// Configuration of the bidding simulation.
///
/// Costs and error distributions are empirical: draws resample the given
/// values uniformly with replacement. Error values are signed fractions
/// (-0.05 means a 5% underestimate); entries at or below -1 are never
/// drawn, since a bid cannot be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    /// Total number of bidders including the firm; at least 2.
    #[serde(default = "default_bidders")]
    pub n_bidders: usize,
    /// Gross margin every bidder adds on top of its cost estimate.
    #[serde(default = "default_margin")]
    pub target_margin: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Empirical true-cost distribution, resampled with replacement.
    pub costs: Vec<f64>,
    /// The manual arm's signed fractional error distribution.
    pub manual_errors: Vec<f64>,
    /// The method arm's signed fractional error distribution.
    pub method_errors: Vec<f64>,
    /// Competitors' signed fractional error distribution (typically the
    /// manual one: competitors are assumed to estimate by hand).
    pub competitor_errors: Vec<f64>,
    /// Share the trial's cost, competitor, and firm-error randomness
    /// between the two arms (common random numbers). Disabling it draws
    /// every quantity independently per arm, recovering the
    /// independent-arms confidence interval.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
}

impl AuctionConfig {
    /// Config with the default auction shape (3 bidders, margin 0.151,
    /// 25,000 trials, common random numbers).
    pub fn new(
        costs: Vec<f64>,
        manual_errors: Vec<f64>,
        method_errors: Vec<f64>,
        competitor_errors: Vec<f64>,
        seed: u64,
    ) -> AuctionConfig {
        AuctionConfig {
            n_bidders: default_bidders(),
            target_margin: default_margin(),
            trials: default_trials(),
            seed,
            costs,
            manual_errors,
            method_errors,
            competitor_errors,
            common_random_numbers: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_bidders < 2 {
            return Err(Error::InvalidParameter(format!(
                "auction needs at least 2 bidders, got {}",
                self.n_bidders
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if !self.target_margin.is_finite() || self.target_margin <= -1.0 {
            return Err(Error::InvalidParameter(format!(
                "target margin {} must be finite and > -1",
                self.target_margin
            )));
        }
        if self.costs.is_empty() {
            return Err(Error::InsufficientData("cost distribution is empty".into()));
        }
        if self.costs.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::InvalidParameter(
                "every cost must be finite and > 0".into(),
            ));
        }
        for (name, errors) in [
            ("manual", &self.manual_errors),
            ("method", &self.method_errors),
            ("competitor", &self.competitor_errors),
        ] {
            if errors.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "{name} error distribution is empty"
                )));
            }
            if errors.iter().any(|e| !e.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} error distribution contains a non-finite value"
                )));
            }
            if errors.iter().all(|e| *e <= -1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} error distribution has no drawable value (> -1)"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of the bidding simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndifferenceResult {
    /// Mean profit per bidding opportunity with manual estimation.
    pub manual_profit_eur: f64,
    /// Mean profit per bidding opportunity with the analogy method.
    pub method_profit_eur: f64,
    /// The labor cost per job at which the two are economically
    /// equivalent: the mean of the per-trial profit differences
    /// (manual - method), which equals the profit means' difference up to
    /// floating-point reassociation.
    pub indifference_cost_eur: f64,
    /// 95% confidence interval on the indifference cost.
    pub ci_lo_eur: f64,
    pub ci_hi_eur: f64,
    pub manual_win_rate: f64,
    pub method_win_rate: f64,
    pub trials: usize,
}

impl IndifferenceResult {
    /// Serializes the result as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a result serialized by [`IndifferenceResult::to_json`].
    pub fn from_json(text: &str) -> Result<IndifferenceResult> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Uniform index into a nonempty empirical distribution.
fn index_of(u: f64, len: usize) -> usize {
    ((u * len as f64) as usize).min(len - 1)
}

/// Draws one value > -1 from an empirical error distribution.
fn draw_error<R: Rng>(errors: &[f64], rng: &mut R) -> f64 {
    loop {
        let e = errors[index_of(rng.random(), errors.len())];
        if e > -1.0 {
            return e;
        }
    }
}

/// Walks the trial's shared uniform sequence from the start, mapping each
/// entry through this arm's distribution and skipping undrawable values.
/// Arms with identical distributions land on bit-identical errors.
fn walk_error<R: Rng>(errors: &[f64], walk: &mut Vec<f64>, rng: &mut R) -> f64 {
    let mut i = 0;
    loop {
        if i == walk.len() {
            walk.push(rng.random());
        }
        let e = errors[index_of(walk[i], errors.len())];
        i += 1;
        if e > -1.0 {
            return e;
        }
    }
}

/// First-price sealed bid: win iff strictly below every competitor (ties
/// lose); the winner's profit is bid minus true cost and may be negative,
/// losers earn exactly zero.
fn arm_profit(cost: f64, error: f64, margin: f64, best_competitor_bid: f64) -> f64 {
    let bid = cost * (1.0 + error) * (1.0 + margin);
    if bid < best_competitor_bid {
        bid - cost
    } else {
        0.0
    }
}

fn trial_paired(cfg: &AuctionConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let cost = cfg.costs[index_of(rng.random(), cfg.costs.len())];
    let mut best_competitor_bid = f64::INFINITY;
    for _ in 1..cfg.n_bidders {
        let e = draw_error(&cfg.competitor_errors, rng);
        let bid = cost * (1.0 + e) * (1.0 + cfg.target_margin);
        if bid < best_competitor_bid {
            best_competitor_bid = bid;
        }
    }
    let mut walk = Vec::new();
    let manual_error = walk_error(&cfg.manual_errors, &mut walk, rng);
    let method_error = walk_error(&cfg.method_errors, &mut walk, rng);
    (
        arm_profit(cost, manual_error, cfg.target_margin, best_competitor_bid),
        arm_profit(cost, method_error, cfg.target_margin, best_competitor_bid),
    )
}

fn trial_arm_independent(cfg: &AuctionConfig, errors: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let cost = cfg.costs[index_of(rng.random(), cfg.costs.len())];
    let mut best_competitor_bid = f64::INFINITY;
    for _ in 1..cfg.n_bidders {
        let e = draw_error(&cfg.competitor_errors, rng);
        let bid = cost * (1.0 + e) * (1.0 + cfg.target_margin);
        if bid < best_competitor_bid {
            best_competitor_bid = bid;
        }
    }
    let error = draw_error(errors, rng);
    arm_profit(cost, error, cfg.target_margin, best_competitor_bid)
}

/// Runs the bidding simulation and reports the labor cost per job at which
/// manual estimation and the analogy method break even.
///
/// Each trial seeds its own substream (seed + trial index), so results are
/// bit-identical for a given seed regardless of worker count. With common
/// random numbers both arms share the trial's cost, competitor bids, and
/// firm-error randomness; identical arm distributions then give an
/// indifference cost of exactly zero.
pub fn simulate_indifference(cfg: &AuctionConfig) -> Result<IndifferenceResult> {
    cfg.validate()?;
    let outcomes: Vec<(f64, f64)> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
            if cfg.common_random_numbers {
                trial_paired(cfg, &mut rng)
            } else {
                let manual = trial_arm_independent(cfg, &cfg.manual_errors, &mut rng);
                let method = trial_arm_independent(cfg, &cfg.method_errors, &mut rng);
                (manual, method)
            }
        })
        .collect();

    let n = outcomes.len() as f64;
    let manual_profit_eur = outcomes.iter().map(|o| o.0).sum::<f64>() / n;
    let method_profit_eur = outcomes.iter().map(|o| o.1).sum::<f64>() / n;
    let manual_win_rate = outcomes.iter().filter(|o| o.0 != 0.0).count() as f64 / n;
    let method_win_rate = outcomes.iter().filter(|o| o.1 != 0.0).count() as f64 / n;
    let diffs: Vec<f64> = outcomes.iter().map(|o| o.0 - o.1).collect();
    let (indifference_cost_eur, ci_lo_eur, ci_hi_eur) = if diffs.len() >= 2 {
        let ci = stats::mean_ci(&diffs, 0.95)?;
        (ci.mean, ci.lo, ci.hi)
    } else {
        (diffs[0], diffs[0], diffs[0])
    };
    Ok(IndifferenceResult {
        manual_profit_eur,
        method_profit_eur,
        indifference_cost_eur,
        ci_lo_eur,
        ci_hi_eur,
        manual_win_rate,
        method_win_rate,
        trials: cfg.trials,
    })
}

/// Break-even estimation time: hours per job a manual estimator may spend
/// before the method's labor saving outweighs the indifference cost.
pub fn break_even_hours(indifference_cost_eur: f64, hourly_rate_eur: f64) -> Result<f64> {
    if !hourly_rate_eur.is_finite() || hourly_rate_eur <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "hourly rate {hourly_rate_eur} must be finite and > 0"
        )));
    }
    Ok(indifference_cost_eur / hourly_rate_eur)
}

/// Indifference costs over a grid of auction shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub bidders: Vec<usize>,
    pub margins: Vec<f64>,
    /// `cells[i][j]` is the result at (bidders\[i\], margins\[j\]).
    pub cells: Vec<Vec<IndifferenceResult>>,
}

impl SweepGrid {
    /// Serializes the grid as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a grid serialized by [`SweepGrid::to_json`].
    pub fn from_json(text: &str) -> Result<SweepGrid> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs one simulation per (bidders, margin) cell. Cell (i, j) uses seed
/// base.seed + i*|margins| + j, so the grid is reproducible and cells are
/// decoupled from one another.
pub fn sensitivity_sweep(
    base: &AuctionConfig,
    bidders: &[usize],
    margins: &[f64],
) -> Result<SweepGrid> {
    if bidders.is_empty() || margins.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep axes must be non-empty".into(),
        ));
    }
    let cells = bidders
        .iter()
        .enumerate()
        .map(|(i, &n_bidders)| {
            margins
                .iter()
                .enumerate()
                .map(|(j, &margin)| {
                    let cell = AuctionConfig {
                        n_bidders,
                        target_margin: margin,
                        seed: base.seed.wrapping_add((i * margins.len() + j) as u64),
                        ..base.clone()
                    };
                    simulate_indifference(&cell)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepGrid {
        bidders: bidders.to_vec(),
        margins: margins.to_vec(),
        cells,
    })
}

/// Sweep grid as CSV: one row per bidder count, one column per margin,
/// cell values are indifference costs in EUR.
pub fn sweep_to_csv(grid: &SweepGrid) -> String {
    let mut out = String::from("n_bidders");
    for margin in &grid.margins {
        out.push_str(&format!(",margin_{margin}"));
    }
    out.push('\n');
    for (bidders, row) in grid.bidders.iter().zip(&grid.cells) {
        out.push_str(&bidders.to_string());
        for cell in row {
            out.push_str(&format!(",{}", cell.indifference_cost_eur));
        }
        out.push('\n');
    }
    out
}
