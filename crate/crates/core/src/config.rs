//! Experiment configuration and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which bias mechanism the generated cohorts carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// No injected bias: treatment and all outcomes are logistic-linear in
    /// the measured confounders.
    #[serde(rename = "reference")]
    Reference,
    /// An extra standard-normal confounder enters treatment and outcome
    /// models but is hidden from estimation.
    #[serde(rename = "unmeasured-confounder")]
    UnmeasuredConfounder,
    /// X1^2 enters the generating models; estimation stays linear.
    #[serde(rename = "quadratic")]
    QuadraticTerm,
    /// X1*X2 enters the generating models; estimation stays linear.
    #[serde(rename = "interaction")]
    InteractionTerm,
    /// Propensities outside the cutoffs are forced to 0/1 with deterministic
    /// treatment.
    #[serde(rename = "non-positivity")]
    NonPositivity,
    /// The largest-effect confounder is observed with additive Gaussian
    /// error.
    #[serde(rename = "measurement-error")]
    MeasurementError,
}

impl Scenario {
    /// Whether this scenario adds an extra regressor to the outcome models.
    pub fn has_extra_term(self) -> bool {
        matches!(
            self,
            Scenario::UnmeasuredConfounder | Scenario::QuadraticTerm | Scenario::InteractionTerm
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Reference => "reference",
            Scenario::UnmeasuredConfounder => "unmeasured-confounder",
            Scenario::QuadraticTerm => "quadratic",
            Scenario::InteractionTerm => "interaction",
            Scenario::NonPositivity => "non-positivity",
            Scenario::MeasurementError => "measurement-error",
        }
    }
}

/// How bias-comparable the negative controls are to the outcome of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suitability {
    /// Controls share the outcome-of-interest confounder slopes and the
    /// bias-generating coefficient (intercepts stay independent).
    #[serde(rename = "ideal")]
    IdealSuitable,
    /// Controls draw their own slopes and bias coefficient from the same
    /// distribution.
    #[serde(rename = "random")]
    RandomSuitable,
    /// Controls lack the bias-generating term entirely (for the
    /// non-positivity scenario they depend on the intercept only).
    #[serde(rename = "unsuitable")]
    Unsuitable,
}

impl Suitability {
    pub fn as_str(self) -> &'static str {
        match self {
            Suitability::IdealSuitable => "ideal",
            Suitability::RandomSuitable => "random",
            Suitability::Unsuitable => "unsuitable",
        }
    }
}

/// Which systematic error model the calibration fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModelChoice {
    /// Negative and synthetic positive controls; bias varies with effect
    /// size.
    Full,
    /// Negative controls only; bias assumed constant across effect sizes.
    Null,
}

impl ErrorModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorModelChoice::Full => "full",
            ErrorModelChoice::Null => "null",
        }
    }
}

/// Denominator used when standardizing absolute bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasDenominator {
    /// Each arm's own standard error (uncalibrated se for the uncalibrated
    /// arm, calibrated se for the calibrated arm).
    #[default]
    OwnArm,
    /// Always the uncalibrated standard error.
    Uncalibrated,
}

/// Which model's coefficients define "largest effect size" for the
/// measurement-error target column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementTarget {
    /// argmax_j |beta_j| of the outcome-of-interest model.
    #[default]
    OutcomeModel,
    /// argmax_j |alpha_j| of the treatment model.
    TreatmentModel,
}

/// Full specification of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub suitability: Suitability,
    /// Cohort size per iteration.
    pub n_subjects: usize,
    /// Number of measured confounders.
    pub n_confounders: usize,
    /// Number of negative control outcomes.
    pub n_negative_controls: usize,
    /// Number of simulation iterations.
    pub n_iterations: usize,
    /// Lower bound of the uniform coefficient distribution (log-odds units).
    pub coef_low: f64,
    /// Upper bound of the uniform coefficient distribution (log-odds units).
    pub coef_high: f64,
    /// Target log odds ratios for synthetic positive controls (one control
    /// per negative control per target).
    pub positive_control_targets: Vec<f64>,
    pub seed: u64,
    pub error_model: ErrorModelChoice,
    /// Propensity cutoffs (lower, upper) for the non-positivity scenario.
    pub positivity_cutoffs: (f64, f64),
    /// Optional quantile at which stabilized weights are capped.
    pub weight_truncation: Option<f64>,
    /// Standardization denominator for the bias metric.
    pub bias_denominator: BiasDenominator,
    /// Which model defines the measurement-error target column.
    pub measurement_target: MeasurementTarget,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Reference,
            suitability: Suitability::RandomSuitable,
            n_subjects: 50_000,
            n_confounders: 10,
            n_negative_controls: 5,
            n_iterations: 500,
            coef_low: -0.693,
            coef_high: 0.6931,
            positive_control_targets: vec![1.5f64.ln(), 2.0f64.ln(), 4.0f64.ln()],
            seed: 42,
            error_model: ErrorModelChoice::Full,
            positivity_cutoffs: (0.05, 0.95),
            weight_truncation: None,
            bias_denominator: BiasDenominator::OwnArm,
            measurement_target: MeasurementTarget::OutcomeModel,
        }
    }
}

impl ScenarioConfig {
    /// Check every invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidConfig(msg))
        }
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.n_confounders == 0 {
            return bad("n_confounders must be positive".into());
        }
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive".into());
        }
        if !(self.coef_low < self.coef_high) {
            return bad(format!(
                "coef_low ({}) must be below coef_high ({})",
                self.coef_low, self.coef_high
            ));
        }
        if self.n_negative_controls < 2 {
            return bad(format!(
                "n_negative_controls must be at least 2 for the {} error model, got {}",
                self.error_model.as_str(),
                self.n_negative_controls
            ));
        }
        if self.error_model == ErrorModelChoice::Full && self.positive_control_targets.is_empty() {
            return bad("the full error model needs at least one positive-control target".into());
        }
        if self.positive_control_targets.iter().any(|&t| !(t > 0.0)) {
            return bad("positive_control_targets must all be positive log odds ratios".into());
        }
        if self.scenario == Scenario::MeasurementError && self.suitability == Suitability::Unsuitable
        {
            return bad(
                "suitability 'unsuitable' is not defined for the measurement-error scenario"
                    .into(),
            );
        }
        if self.scenario == Scenario::Reference && self.suitability != Suitability::RandomSuitable {
            return bad(
                "the reference scenario admits only suitability 'random' (controls and outcome \
                 share structure by construction)"
                    .into(),
            );
        }
        if self.scenario == Scenario::InteractionTerm && self.n_confounders < 2 {
            return bad("the interaction scenario needs at least 2 confounders".into());
        }
        let (lo, hi) = self.positivity_cutoffs;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!(
                "positivity_cutoffs must satisfy 0 < lower < upper < 1, got ({lo}, {hi})"
            ));
        }
        if let Some(q) = self.weight_truncation {
            if !(0.5 < q && q < 1.0) {
                return bad(format!("weight_truncation must lie in (0.5, 1), got {q}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_setup() {
        let c = ScenarioConfig::default();
        assert_eq!(c.n_confounders, 10);
        assert_eq!(c.n_subjects, 50_000);
        assert_eq!(c.n_iterations, 500);
        assert_eq!(c.n_negative_controls, 5);
        assert_eq!(c.coef_low, -0.693);
        assert_eq!(c.coef_high, 0.6931);
        assert_eq!(c.positive_control_targets.len(), 3);
        c.validate().unwrap();
    }

    #[test]
    fn measurement_error_rejects_unsuitable() {
        let c = ScenarioConfig {
            scenario: Scenario::MeasurementError,
            suitability: Suitability::Unsuitable,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn reference_admits_only_random_suitable() {
        let c = ScenarioConfig {
            suitability: Suitability::IdealSuitable,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ScenarioConfig::default();
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_inverted_coefficient_range() {
        let c = ScenarioConfig {
            coef_low: 0.7,
            coef_high: -0.7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_too_few_negative_controls() {
        let c = ScenarioConfig {
            n_negative_controls: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_nonpositive_targets() {
        let c = ScenarioConfig {
            positive_control_targets: vec![0.5, 0.0],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_positivity_cutoffs() {
        let c = ScenarioConfig {
            positivity_cutoffs: (0.9, 0.1),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
