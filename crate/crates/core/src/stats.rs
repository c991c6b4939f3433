//! Error metrics and the hypothesis tests used by the evaluation harness:
//! MAPE and percentile summaries, t-based confidence intervals, an OLS
//! slope test, the paired t-test, and Pearson correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Absolute percentage error of one estimate, in percent.
///
/// Undefined (error) for a zero actual value.
pub fn ape_pct(actual: f64, estimated: f64) -> Result<f64> {
    if actual == 0.0 || !actual.is_finite() || !estimated.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "APE undefined for actual {actual}, estimate {estimated}"
        )));
    }
    Ok(100.0 * (estimated - actual).abs() / actual.abs())
}

/// Mean absolute percentage error over paired slices, in percent.
pub fn mape(actual: &[f64], estimated: &[f64]) -> Result<f64> {
    if actual.is_empty() || actual.len() != estimated.len() {
        return Err(Error::InvalidParameter(format!(
            "MAPE needs equal non-empty slices, got {} and {}",
            actual.len(),
            estimated.len()
        )));
    }
    let mut sum = 0.0;
    for (&a, &e) in actual.iter().zip(estimated) {
        sum += ape_pct(a, e)?;
    }
    Ok(sum / actual.len() as f64)
}

/// Percentile by linear interpolation at rank `h = (n - 1) p + 1` over the
/// sorted values (the convention spreadsheet PERCENTILE and numpy's default
/// follow). `p` is a fraction in [0, 1].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("percentile of empty slice".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "percentile fraction {p} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Two-sided Student-t quantile: the x with `P(T_df <= x) = p`.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) || df <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "t quantile needs p in (0,1) and df > 0, got p={p}, df={df}"
        )));
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

fn t_cdf(x: f64, df: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0 checked by caller")
        .cdf(x)
}

/// Sample mean with its standard error and t-based confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub df: usize,
}

/// Mean and two-sided `level` confidence interval (t distribution,
/// n - 1 degrees of freedom). Needs n >= 2.
pub fn mean_ci(values: &[f64], level: f64) -> Result<MeanCi> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "confidence interval needs n >= 2, got {n}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = t_quantile(0.5 + level / 2.0, (n - 1) as f64)?;
    Ok(MeanCi {
        mean,
        se,
        lo: mean - t * se,
        hi: mean + t * se,
        df: n - 1,
    })
}

/// Ordinary-least-squares slope test of y against x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeTest {
    pub slope: f64,
    pub intercept: f64,
    pub se: f64,
    pub t: f64,
    /// Two-sided p-value for slope = 0.
    pub p: f64,
    pub df: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// True when the 95% confidence interval excludes zero.
    pub reject_zero_slope: bool,
}

/// Fits `y = intercept + slope x` and tests the slope against zero at the
/// 95% level. Needs n >= 3 and non-constant x.
pub fn ols_slope_test(x: &[f64], y: &[f64]) -> Result<SlopeTest> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::InsufficientData(format!(
            "slope test needs n >= 3 paired points, got {} and {}",
            n,
            y.len()
        )));
    }
    let xm = x.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let sxx = x.iter().map(|v| (v - xm).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("slope test needs non-constant x".into()));
    }
    let sxy = x.iter().zip(y).map(|(&a, &b)| (a - xm) * (b - ym)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>();
    let df = n - 2;
    let se = (rss / df as f64 / sxx).sqrt();
    let tq = t_quantile(0.975, df as f64)?;
    let (t, p) = if se == 0.0 {
        // perfect fit: infinitely strong evidence unless the slope is zero
        if slope == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY * slope.signum(), 0.0)
        }
    } else {
        let t = slope / se;
        (t, 2.0 * (1.0 - t_cdf(t.abs(), df as f64)))
    };
    let ci_lo = slope - tq * se;
    let ci_hi = slope + tq * se;
    Ok(SlopeTest {
        slope,
        intercept,
        se,
        t,
        p,
        df,
        ci_lo,
        ci_hi,
        reject_zero_slope: ci_lo > 0.0 || ci_hi < 0.0,
    })
}

/// Alternative hypothesis for [`paired_t_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// H1: mean(a - b) != 0.
    TwoSided,
    /// H1: mean(a - b) > 0, i.e. b runs below a.
    Greater,
}

/// Result of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Paired t-test on equal-length slices.
///
/// All-zero differences give t = 0, p = 1 rather than 0/0.
pub fn paired_t_test(a: &[f64], b: &[f64], tail: Tail) -> Result<PairedT> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs n >= 2 pairs, got {} and {}",
            n,
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            let t = f64::INFINITY * mean.signum();
            let p = match tail {
                Tail::TwoSided => 0.0,
                Tail::Greater => {
                    if mean > 0.0 {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
            (t, p)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let p = match tail {
            Tail::TwoSided => 2.0 * (1.0 - t_cdf(t.abs(), df as f64)),
            Tail::Greater => 1.0 - t_cdf(t, df as f64),
        };
        (t, p)
    };
    Ok(PairedT {
        t,
        p,
        df,
        mean_diff: mean,
    })
}

/// Pearson correlation coefficient. Needs n >= 2 and non-constant inputs.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::InsufficientData(format!(
            "correlation needs n >= 2 pairs, got {} and {}",
            n,
            b.len()
        )));
    }
    let am = a.iter().sum::<f64>() / n as f64;
    let bm = b.iter().sum::<f64>() / n as f64;
    let saa = a.iter().map(|v| (v - am).powi(2)).sum::<f64>();
    let sbb = b.iter().map(|v| (v - bm).powi(2)).sum::<f64>();
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InsufficientData(
            "correlation undefined for a constant input".into(),
        ));
    }
    let sab = a.iter().zip(b).map(|(&x, &y)| (x - am) * (y - bm)).sum::<f64>();
    Ok(sab / (saa * sbb).sqrt())
}

/// Summary of signed and absolute percentage errors for a set of estimates.
///
/// All percentage fields are in percent units. For n = 1 the MAPE standard
/// error is 0 and the interval collapses to the point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    /// Mean signed error in EUR (estimate - actual).
    pub mean_error_eur: f64,
    /// Mean signed percentage error.
    pub mean_error_pct: f64,
    /// Standard deviation of the signed percentage errors.
    pub std_dev_pct: f64,
    pub mape_pct: f64,
    pub mape_se_pct: f64,
    pub mape_ci_lo_pct: f64,
    pub mape_ci_hi_pct: f64,
    pub min_ape_pct: f64,
    pub median_ape_pct: f64,
    /// Third quartile of the absolute percentage errors.
    pub q3_ape_pct: f64,
    pub max_ape_pct: f64,
}

impl ErrorStats {
    /// Builds the summary from paired actual/estimated values (95% CI on
    /// the MAPE). Errors on empty input or a zero actual.
    pub fn from_pairs(actual: &[f64], estimated: &[f64]) -> Result<ErrorStats> {
        let n = actual.len();
        if n == 0 || estimated.len() != n {
            return Err(Error::InsufficientData(format!(
                "error summary needs equal non-empty slices, got {} and {}",
                n,
                estimated.len()
            )));
        }
        let mut apes = Vec::with_capacity(n);
        let mut signed_pct = Vec::with_capacity(n);
        let mut sum_err_eur = 0.0;
        for (&a, &e) in actual.iter().zip(estimated) {
            apes.push(ape_pct(a, e)?);
            signed_pct.push(100.0 * (e - a) / a);
            sum_err_eur += e - a;
        }
        let mape_pct = apes.iter().sum::<f64>() / n as f64;
        let mean_error_pct = signed_pct.iter().sum::<f64>() / n as f64;
        let std_dev_pct = if n >= 2 {
            (signed_pct
                .iter()
                .map(|v| (v - mean_error_pct).powi(2))
                .sum::<f64>()
                / (n - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let (mape_se_pct, mape_ci_lo_pct, mape_ci_hi_pct) = if n >= 2 {
            let ci = mean_ci(&apes, 0.95)?;
            (ci.se, ci.lo, ci.hi)
        } else {
            (0.0, mape_pct, mape_pct)
        };
        Ok(ErrorStats {
            n,
            mean_error_eur: sum_err_eur / n as f64,
            mean_error_pct,
            std_dev_pct,
            mape_pct,
            mape_se_pct,
            mape_ci_lo_pct,
            mape_ci_hi_pct,
            min_ape_pct: percentile(&apes, 0.0)?,
            median_ape_pct: percentile(&apes, 0.5)?,
            q3_ape_pct: percentile(&apes, 0.75)?,
            max_ape_pct: percentile(&apes, 1.0)?,
        })
    }
}
