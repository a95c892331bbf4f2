//! Aggregation of per-iteration results into coverage, standardized bias,
//! interval width, and funnel-plot rows.

use crate::calibrate::CalibratedEstimate;
use crate::config::BiasDenominator;
use crate::error::{Error, Result};

/// Uncalibrated arm of one iteration (95% Wald interval).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncalibratedArm {
    pub theta_hat: f64,
    pub se_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl UncalibratedArm {
    pub fn from_estimate(theta_hat: f64, se_hat: f64) -> Self {
        UncalibratedArm {
            theta_hat,
            se_hat,
            ci_low: theta_hat - 1.96 * se_hat,
            ci_high: theta_hat + 1.96 * se_hat,
        }
    }
}

/// One successful iteration's calibrated and uncalibrated results.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta_true: f64,
    pub uncal: UncalibratedArm,
    pub cal: CalibratedEstimate,
    /// Share of this iteration's controls whose calibrated interval covers
    /// their true effect.
    pub control_cal_coverage: f64,
}

/// Which arm an aggregate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Uncal,
    Cal,
}

/// Aggregated results for one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub coverage_uncal: f64,
    pub coverage_cal: f64,
    pub mean_std_abs_bias_uncal: f64,
    pub mean_std_abs_bias_cal: f64,
    pub mean_ci_width_uncal: f64,
    pub mean_ci_width_cal: f64,
    pub mean_control_cal_coverage: f64,
    pub n_iterations_used: usize,
    pub n_failed: usize,
}

/// One funnel-plot point: bias against standard error with a significance
/// flag (whether the arm's interval excludes the true effect).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelRow {
    pub iteration: usize,
    pub bias: f64,
    pub se: f64,
    pub calibrated: bool,
    pub significant: bool,
}

fn arm_parts(r: &IterationRecord, which: Arm) -> (f64, f64, f64, f64) {
    match which {
        Arm::Uncal => (
            r.uncal.theta_hat,
            r.uncal.se_hat,
            r.uncal.ci_low,
            r.uncal.ci_high,
        ),
        Arm::Cal => (r.cal.theta_cal, r.cal.se_cal, r.cal.ci_low, r.cal.ci_high),
    }
}

/// Records in iteration order, so sums do not depend on input ordering.
fn in_iteration_order(records: &[IterationRecord]) -> Vec<&IterationRecord> {
    let mut sorted: Vec<&IterationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.iteration);
    sorted
}

/// Fraction of iterations whose interval covers the true effect.
pub fn coverage(records: &[IterationRecord], which: Arm) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("coverage"));
    }
    let hits = records
        .iter()
        .filter(|r| {
            let (_, _, lo, hi) = arm_parts(r, which);
            lo <= r.theta_true && r.theta_true <= hi
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean over iterations of |theta-hat - theta-true| / se, with the arm's own
/// standard error as denominator.
pub fn mean_standardized_abs_bias(records: &[IterationRecord], which: Arm) -> Result<f64> {
    mean_standardized_abs_bias_denom(records, which, BiasDenominator::OwnArm)
}

/// Standardized absolute bias with an explicit denominator choice.
pub fn mean_standardized_abs_bias_denom(
    records: &[IterationRecord],
    which: Arm,
    denom: BiasDenominator,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("mean_standardized_abs_bias"));
    }
    let mut total = 0.0;
    for r in in_iteration_order(records) {
        let (theta, own_se, _, _) = arm_parts(r, which);
        let se = match denom {
            BiasDenominator::OwnArm => own_se,
            BiasDenominator::Uncalibrated => r.uncal.se_hat,
        };
        if !(se > 0.0) {
            return Err(Error::InvalidInput(format!(
                "nonpositive standard error in iteration {}",
                r.iteration
            )));
        }
        total += (theta - r.theta_true).abs() / se;
    }
    Ok(total / records.len() as f64)
}

/// Mean interval width for the chosen arm.
pub fn mean_ci_width(records: &[IterationRecord], which: Arm) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("mean_ci_width"));
    }
    let total: f64 = in_iteration_order(records)
        .iter()
        .map(|r| {
            let (_, _, lo, hi) = arm_parts(r, which);
            hi - lo
        })
        .sum();
    Ok(total / records.len() as f64)
}

/// Two funnel rows per iteration, ordered by (iteration, calibrated).
pub fn build_funnel_rows(records: &[IterationRecord]) -> Result<Vec<FunnelRow>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("build_funnel_rows"));
    }
    let mut rows = Vec::with_capacity(records.len() * 2);
    for r in records {
        for (calibrated, which) in [(false, Arm::Uncal), (true, Arm::Cal)] {
            let (theta, se, lo, hi) = arm_parts(r, which);
            rows.push(FunnelRow {
                iteration: r.iteration,
                bias: theta - r.theta_true,
                se,
                calibrated,
                significant: !(lo <= r.theta_true && r.theta_true <= hi),
            });
        }
    }
    rows.sort_by(|a, b| (a.iteration, a.calibrated).cmp(&(b.iteration, b.calibrated)));
    Ok(rows)
}

/// Assemble the summary from successful records and the failure count.
pub fn summarize(records: &[IterationRecord], n_failed: usize) -> Result<ScenarioSummary> {
    Ok(ScenarioSummary {
        coverage_uncal: coverage(records, Arm::Uncal)?,
        coverage_cal: coverage(records, Arm::Cal)?,
        mean_std_abs_bias_uncal: mean_standardized_abs_bias(records, Arm::Uncal)?,
        mean_std_abs_bias_cal: mean_standardized_abs_bias(records, Arm::Cal)?,
        mean_ci_width_uncal: mean_ci_width(records, Arm::Uncal)?,
        mean_ci_width_cal: mean_ci_width(records, Arm::Cal)?,
        mean_control_cal_coverage: in_iteration_order(records)
            .iter()
            .map(|r| r.control_cal_coverage)
            .sum::<f64>()
            / records.len() as f64,
        n_iterations_used: records.len(),
        n_failed,
    })
}

/// Summary variant honoring the configured bias denominator.
pub fn summarize_with(
    records: &[IterationRecord],
    n_failed: usize,
    denom: BiasDenominator,
) -> Result<ScenarioSummary> {
    let mut s = summarize(records, n_failed)?;
    s.mean_std_abs_bias_uncal = mean_standardized_abs_bias_denom(records, Arm::Uncal, denom)?;
    s.mean_std_abs_bias_cal = mean_standardized_abs_bias_denom(records, Arm::Cal, denom)?;
    Ok(s)
}
