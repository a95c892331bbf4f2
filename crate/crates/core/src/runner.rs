//! Per-iteration pipeline and scenario orchestration.
//!
//! Each iteration derives its own random streams from (seed, iteration), so
//! results are bit-identical across runs and across any degree of
//! parallelism.

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::Serialize;

use crate::calibrate::{
    calibrate_ci, fit_null_model, fit_systematic_error_model, ControlEstimate,
};
use crate::config::{ErrorModelChoice, ScenarioConfig};
use crate::controls::{fit_negative_control, synthesize_positive_control};
use crate::error::{Error, IterationError, Result};
use crate::estimate::{
    estimate_effect, propensity_scores, stabilized_weights, truncate_weights, OutcomeId,
};
use crate::metrics::{summarize_with, IterationRecord, ScenarioSummary, UncalibratedArm};
use crate::rng::{derive_stream, STREAM_STUDY, STREAM_SYNTHESIS};
use crate::sim::{build_study, SimulatedStudy};

const CI_ALPHA: f64 = 0.05;
/// Abort threshold on the failed-iteration fraction.
const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Run metadata persisted alongside the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: ScenarioConfig,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    /// (iteration, error description) for every failed iteration.
    pub failures: Vec<(usize, String)>,
}

/// Everything a completed scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub summary: ScenarioSummary,
    pub records: Vec<IterationRecord>,
    pub manifest: RunManifest,
}

/// A run aborted for exceeding the failure budget still carries its manifest
/// so it can be persisted.
#[derive(Debug)]
pub enum RunError {
    InvalidConfig(Error),
    ExcessiveFailures { manifest: Box<RunManifest> },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::InvalidConfig(e) => write!(f, "{e}"),
            RunError::ExcessiveFailures { manifest } => write!(
                f,
                "{} of {} iterations failed (more than {:.0}%)",
                manifest.failures.len(),
                manifest.config.n_iterations,
                MAX_FAILURE_FRACTION * 100.0
            ),
        }
    }
}

impl std::error::Error for RunError {}

/// Estimate the outcome of interest and every control, sharing one set of
/// propensity weights.
fn estimate_all(
    config: &ScenarioConfig,
    study: &SimulatedStudy,
    iteration: usize,
) -> Result<(crate::estimate::EffectEstimate, Vec<ControlEstimate>)> {
    let ps = propensity_scores(&study.x_observed, &study.z)?;
    let mut weights = stabilized_weights(&study.z, &ps)?;
    if let Some(q) = config.weight_truncation {
        weights = truncate_weights(&weights, q)?;
    }

    let mut est_oi = estimate_effect(&study.z, &study.y_star, &weights)?;
    est_oi.outcome_id = OutcomeId::OutcomeOfInterest;

    let mut controls = Vec::with_capacity(
        study.y_neg.len()
            * (1 + if config.error_model == ErrorModelChoice::Full {
                config.positive_control_targets.len()
            } else {
                0
            }),
    );
    for (s, y) in study.y_neg.iter().enumerate() {
        let mut est = estimate_effect(&study.z, y, &weights)?;
        est.outcome_id = OutcomeId::NegativeControl(s);
        controls.push(ControlEstimate {
            theta_hat: est.theta_hat,
            se_hat: est.se_hat,
            true_effect: 0.0,
        });
    }

    if config.error_model == ErrorModelChoice::Full {
        for s in 0..study.y_neg.len() {
            let nc_fit = fit_negative_control(study, s)?;
            for (t_idx, &target) in config.positive_control_targets.iter().enumerate() {
                let mut rng = derive_stream(
                    config.seed,
                    &[STREAM_SYNTHESIS, iteration as u64, s as u64, t_idx as u64],
                );
                let pc = synthesize_positive_control(&nc_fit, study, target, &mut rng)?;
                let mut est = estimate_effect(&study.z, &pc.y_pos, &weights)?;
                est.outcome_id = OutcomeId::PositiveControl { source: s, target };
                controls.push(ControlEstimate {
                    theta_hat: est.theta_hat,
                    se_hat: est.se_hat,
                    true_effect: pc.nominal_true_effect,
                });
            }
        }
    }
    Ok((est_oi, controls))
}

/// One iteration's pre-calibration outputs: the outcome-of-interest estimate,
/// every control estimate, and the hidden truth. Lets callers fit and compare
/// calibration models on identical estimates.
#[derive(Debug, Clone)]
pub struct IterationEstimates {
    pub iteration: usize,
    pub theta_true: f64,
    pub outcome: crate::estimate::EffectEstimate,
    pub controls: Vec<ControlEstimate>,
}

/// Simulate and estimate one iteration without calibrating.
pub fn run_iteration_estimates(
    config: &ScenarioConfig,
    iteration: usize,
) -> std::result::Result<IterationEstimates, IterationError> {
    let wrap = |source: Error| IterationError { iteration, source };
    let mut rng = derive_stream(config.seed, &[STREAM_STUDY, iteration as u64]);
    let study = build_study(config, iteration, &mut rng).map_err(wrap)?;
    let (outcome, controls) = estimate_all(config, &study, iteration).map_err(wrap)?;
    Ok(IterationEstimates {
        iteration,
        theta_true: study.theta_true,
        outcome,
        controls,
    })
}

/// Execute one iteration: simulate, estimate, synthesize, fit the error
/// model, and calibrate.
pub fn run_iteration(
    config: &ScenarioConfig,
    iteration: usize,
) -> std::result::Result<IterationRecord, IterationError> {
    let wrap = |source: Error| IterationError { iteration, source };

    let mut rng = derive_stream(config.seed, &[STREAM_STUDY, iteration as u64]);
    let study = build_study(config, iteration, &mut rng).map_err(wrap)?;
    let (est_oi, controls) = estimate_all(config, &study, iteration).map_err(wrap)?;

    let negatives: Vec<ControlEstimate> = controls
        .iter()
        .filter(|c| c.true_effect == 0.0)
        .copied()
        .collect();
    let model = match config.error_model {
        ErrorModelChoice::Null => fit_null_model(&negatives).map_err(wrap)?,
        ErrorModelChoice::Full => fit_systematic_error_model(&controls).map_err(wrap)?,
    };

    let cal = calibrate_ci(&est_oi, &model, CI_ALPHA).map_err(wrap)?;

    let mut covered = 0usize;
    for c in &controls {
        let as_estimate = crate::estimate::EffectEstimate {
            theta_hat: c.theta_hat,
            se_hat: c.se_hat,
            outcome_id: OutcomeId::OutcomeOfInterest,
        };
        let c_cal = calibrate_ci(&as_estimate, &model, CI_ALPHA).map_err(wrap)?;
        if c_cal.ci_low <= c.true_effect && c.true_effect <= c_cal.ci_high {
            covered += 1;
        }
    }

    Ok(IterationRecord {
        iteration,
        theta_true: study.theta_true,
        uncal: UncalibratedArm::from_estimate(est_oi.theta_hat, est_oi.se_hat),
        cal,
        control_cal_coverage: covered as f64 / controls.len() as f64,
    })
}

/// Execute every iteration (in parallel when a rayon pool is configured),
/// aggregate, and assemble the manifest.
pub fn run_scenario(config: &ScenarioConfig) -> std::result::Result<ScenarioRun, RunError> {
    config.validate().map_err(RunError::InvalidConfig)?;
    let started = Utc::now();

    let results: Vec<std::result::Result<IterationRecord, IterationError>> = (0..config
        .n_iterations)
        .into_par_iter()
        .map(|it| run_iteration(config, it))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((e.iteration, e.source.to_string())),
        }
    }
    records.sort_by_key(|r| r.iteration);

    let manifest = RunManifest {
        config: config.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: Utc::now(),
        failures: failures.clone(),
    };

    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_iterations as f64 {
        return Err(RunError::ExcessiveFailures {
            manifest: Box::new(manifest),
        });
    }
    let summary = summarize_with(&records, failures.len(), config.bias_denominator)
        .map_err(RunError::InvalidConfig)?;
    Ok(ScenarioRun {
        summary,
        records,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Scenario, Suitability};

    fn tiny_config() -> ScenarioConfig {
        ScenarioConfig {
            scenario: Scenario::Reference,
            suitability: Suitability::RandomSuitable,
            n_subjects: 3_000,
            n_confounders: 3,
            n_negative_controls: 4,
            n_iterations: 6,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn null_model_uses_negatives_only() {
        let study_cfg = ScenarioConfig {
            error_model: ErrorModelChoice::Null,
            ..tiny_config()
        };
        let mut rng = derive_stream(study_cfg.seed, &[STREAM_STUDY, 0]);
        let study = build_study(&study_cfg, 0, &mut rng).unwrap();
        let (_, controls) = estimate_all(&study_cfg, &study, 0).unwrap();
        assert_eq!(controls.len(), 4);
        assert!(controls.iter().all(|c| c.true_effect == 0.0));
    }

    #[test]
    fn full_model_adds_positive_controls() {
        let cfg = ScenarioConfig {
            n_negative_controls: 5,
            ..tiny_config()
        };
        let mut rng = derive_stream(cfg.seed, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let (_, controls) = estimate_all(&cfg, &study, 0).unwrap();
        // 5 negatives + 5 x 3 positives.
        assert_eq!(controls.len(), 20);
        assert_eq!(controls.iter().filter(|c| c.true_effect == 0.0).count(), 5);
        assert!(controls
            .iter()
            .filter(|c| c.true_effect > 0.0)
            .all(|c| c.se_hat > 0.0));
    }

    #[test]
    fn iteration_record_is_deterministic() {
        let cfg = tiny_config();
        let a = run_iteration(&cfg, 2).unwrap();
        let b = run_iteration(&cfg, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_iteration_summary_matches_record() {
        let cfg = ScenarioConfig {
            n_iterations: 1,
            ..tiny_config()
        };
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.records.len(), 1);
        let r = &run.records[0];
        let covered =
            r.uncal.ci_low <= r.theta_true && r.theta_true <= r.uncal.ci_high;
        assert_eq!(run.summary.coverage_uncal, f64::from(u8::from(covered)));
        assert_eq!(run.summary.n_iterations_used, 1);
        assert_eq!(run.summary.n_failed, 0);
        assert!(
            (run.summary.mean_ci_width_uncal - (r.uncal.ci_high - r.uncal.ci_low)).abs() < 1e-15
        );
    }

    #[test]
    fn excessive_failures_abort_with_manifest() {
        // Two subjects cannot support an 11-parameter propensity model, so
        // every iteration fails.
        let cfg = ScenarioConfig {
            n_subjects: 2,
            n_iterations: 5,
            ..tiny_config()
        };
        match run_scenario(&cfg) {
            Err(RunError::ExcessiveFailures { manifest }) => {
                assert_eq!(manifest.failures.len(), 5);
                assert_eq!(manifest.config.n_subjects, 2);
            }
            other => panic!("expected excessive failures, got {other:?}"),
        }
    }

    #[test]
    fn every_iteration_accounted_for() {
        let cfg = tiny_config();
        let run = run_scenario(&cfg).unwrap();
        let mut seen: Vec<usize> = run.records.iter().map(|r| r.iteration).collect();
        seen.extend(run.manifest.failures.iter().map(|f| f.0));
        seen.sort_unstable();
        assert_eq!(seen, (0..cfg.n_iterations).collect::<Vec<_>>());
    }
}
