//! Empirical calibration of p-values and confidence intervals using negative
//! and synthetic positive control outcomes, with a Monte Carlo harness that
//! generates bias scenarios (unmeasured confounding, model misspecification,
//! non-positivity, measurement error) and scores calibrated against
//! uncalibrated estimates.
//!
//! Pipeline per iteration: simulate a cohort, fit a propensity model on the
//! observed confounders, form stabilized inverse-probability weights,
//! estimate the treatment effect on the outcome of interest and every
//! control with a weighted logistic regression and sandwich standard error,
//! synthesize positive controls from the negative-control fits, fit the
//! systematic error model, and calibrate the interval of the outcome of
//! interest.

pub mod calibrate;
pub mod config;
pub mod controls;
pub mod error;
pub mod estimate;
pub mod metrics;
mod optim;
pub mod output;
pub mod rng;
pub mod runner;
pub mod sim;

pub use calibrate::{
    calibrate_ci, calibrate_pvalue, fit_null_model, fit_systematic_error_model,
    CalibratedEstimate, ControlEstimate, ErrorModelKind, SystematicErrorModel,
};
pub use config::{
    BiasDenominator, ErrorModelChoice, MeasurementTarget, Scenario, ScenarioConfig, Suitability,
};
pub use controls::{fit_negative_control, synthesize_positive_control, NegativeControlFit,
    PositiveControl};
pub use error::{Error, IterationError, Result};
pub use estimate::{
    estimate_effect, fit_logistic, propensity_scores, stabilized_weights, truncate_weights,
    EffectEstimate, LogisticFit, OutcomeId,
};
pub use metrics::{
    build_funnel_rows, coverage, mean_ci_width, mean_standardized_abs_bias, Arm, FunnelRow,
    IterationRecord, ScenarioSummary,
};
pub use runner::{
    run_iteration, run_iteration_estimates, run_scenario, IterationEstimates, RunError,
    RunManifest, ScenarioRun,
};
pub use sim::{
    apply_measurement_error, apply_positivity_violation, build_study, gen_confounders,
    gen_outcome, gen_treatment, sample_coefficients, true_marginal_effect, CoefficientSet,
    OutcomeForm, SimulatedStudy,
};
