//! Cohort simulation: confounders, treatment, outcomes, and the five bias
//! injectors, plus the counterfactual oracle for the true marginal effect.
//!
//! Everything here is a pure function of its inputs and the supplied random
//! stream; `build_study` consumes one stream derived from (seed, iteration).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::{MeasurementTarget, Scenario, ScenarioConfig, Suitability};
use crate::error::{Error, Result};

/// Scale applied to the treatment-model coefficient on the misspecification
/// regressor (X1^2 or X1*X2). The outcome-side coefficients use the full
/// uniform range; the treatment-side pathway is weaker so that the
/// misspecification scenarios produce the reported moderate coverage loss
/// rather than unmeasured-confounder-sized bias.
pub const TREATMENT_EXTRA_SCALE: f64 = 0.25;

/// Hyperprior for the measurement-error mean, redrawn per iteration.
pub const MEASUREMENT_MU_RANGE: (f64, f64) = (0.1, 1.0);
/// Hyperprior for the measurement-error standard deviation.
pub const MEASUREMENT_SIGMA_RANGE: (f64, f64) = (0.1, 0.3);

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Which extra regressor an outcome model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeForm {
    Linear,
    PlusU,
    PlusQuadratic,
    PlusInteraction,
}

impl OutcomeForm {
    /// The outcome-model form used by a scenario.
    pub fn for_scenario(scenario: Scenario) -> OutcomeForm {
        match scenario {
            Scenario::UnmeasuredConfounder => OutcomeForm::PlusU,
            Scenario::QuadraticTerm => OutcomeForm::PlusQuadratic,
            Scenario::InteractionTerm => OutcomeForm::PlusInteraction,
            _ => OutcomeForm::Linear,
        }
    }
}

/// Generating model for one negative control outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeControlCoef {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    /// Coefficient on the scenario's extra regressor (0 when absent).
    pub extra: f64,
}

/// Every sampled coefficient of one iteration's generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    /// Treatment model: intercept and confounder slopes.
    pub alpha: Vec<f64>,
    /// Treatment-model coefficient on the unmeasured confounder.
    pub alpha_u: f64,
    /// Treatment-model coefficient on the misspecification regressor.
    pub alpha_extra: f64,
    /// Outcome-of-interest model: intercept and confounder slopes.
    pub beta_star: Vec<f64>,
    /// Treatment effect in the outcome-of-interest model.
    pub beta_z_star: f64,
    /// Outcome-of-interest coefficient on the extra regressor.
    pub beta_extra_star: f64,
    /// Per-negative-control models.
    pub beta_neg: Vec<NegativeControlCoef>,
}

/// One iteration's cohort: what the estimator may see plus the hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStudy {
    /// Confounders as generated (n x m).
    pub x_true: DMatrix<f64>,
    /// Confounders as observed; differs from `x_true` in exactly one column
    /// under measurement error.
    pub x_observed: DMatrix<f64>,
    /// Unmeasured confounder (all zero unless the scenario generates it).
    pub u: Vec<f64>,
    /// Treatment assignment.
    pub z: Vec<u8>,
    /// Outcome of interest.
    pub y_star: Vec<u8>,
    /// Negative control outcomes, one vector per control.
    pub y_neg: Vec<Vec<u8>>,
    /// Generating treatment probabilities after any positivity modification.
    pub true_ps: Vec<f64>,
    pub truth: CoefficientSet,
    /// Oracle marginal log odds ratio of Z on Y*.
    pub theta_true: f64,
}

fn draw_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draw every generating coefficient for one iteration.
///
/// Draw order is fixed: treatment model (intercept, slopes, then the U and
/// extra coefficients when the scenario has them), outcome of interest
/// (intercept, slopes, treatment coefficient, extra coefficient), then per
/// control: intercept, slopes (skipped under ideal sharing and zeroed for
/// unsuitable non-positivity controls), extra coefficient (drawn only under
/// random suitability).
pub fn sample_coefficients(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> CoefficientSet {
    let m = config.n_confounders;
    let (lo, hi) = (config.coef_low, config.coef_high);
    let unif = |rng: &mut ChaCha8Rng| draw_uniform(rng, lo, hi);

    let alpha: Vec<f64> = (0..=m).map(|_| unif(rng)).collect();
    let alpha_u = match config.scenario {
        Scenario::UnmeasuredConfounder => unif(rng),
        _ => 0.0,
    };
    let alpha_extra = match config.scenario {
        Scenario::QuadraticTerm | Scenario::InteractionTerm => {
            TREATMENT_EXTRA_SCALE * unif(rng)
        }
        _ => 0.0,
    };

    let beta_star: Vec<f64> = (0..=m).map(|_| unif(rng)).collect();
    let beta_z_star = unif(rng);
    let beta_extra_star = if config.scenario.has_extra_term() {
        unif(rng)
    } else {
        0.0
    };

    let mut beta_neg = Vec::with_capacity(config.n_negative_controls);
    for _ in 0..config.n_negative_controls {
        let intercept = unif(rng);
        let slopes: Vec<f64> = match config.suitability {
            Suitability::IdealSuitable => beta_star[1..].to_vec(),
            Suitability::Unsuitable if config.scenario == Scenario::NonPositivity => {
                vec![0.0; m]
            }
            _ => (0..m).map(|_| unif(rng)).collect(),
        };
        let extra = match config.suitability {
            Suitability::IdealSuitable => beta_extra_star,
            Suitability::RandomSuitable if config.scenario.has_extra_term() => unif(rng),
            _ => 0.0,
        };
        beta_neg.push(NegativeControlCoef {
            intercept,
            slopes,
            extra,
        });
    }

    CoefficientSet {
        alpha,
        alpha_u,
        alpha_extra,
        beta_star,
        beta_z_star,
        beta_extra_star,
        beta_neg,
    }
}

/// Draw an n x m matrix of independent standard normal confounders.
/// Values are drawn column by column.
pub fn gen_confounders(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            x[(i, j)] = StandardNormal.sample(rng);
        }
    }
    x
}

/// Values of the misspecification regressor (X1^2 or X1*X2); `None` for
/// forms without one derived from the confounders.
pub fn extra_regressor(form: OutcomeForm, x: &DMatrix<f64>) -> Option<Vec<f64>> {
    match form {
        OutcomeForm::PlusQuadratic => {
            let c = x.column(0);
            Some(c.iter().map(|v| v * v).collect())
        }
        OutcomeForm::PlusInteraction => {
            let c0 = x.column(0);
            let c1 = x.column(1);
            Some(c0.iter().zip(c1.iter()).map(|(a, b)| a * b).collect())
        }
        _ => None,
    }
}

fn accumulate_slopes(lp: &mut [f64], x: &DMatrix<f64>, slopes: &[f64]) {
    debug_assert_eq!(x.ncols(), slopes.len());
    for (j, &s) in slopes.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let col = x.column(j);
        for (l, v) in lp.iter_mut().zip(col.iter()) {
            *l += s * v;
        }
    }
}

/// Generate treatment assignments and their generating probabilities.
///
/// The linear predictor is alpha_0 + sum_j alpha_j x_ij + alpha_u u_i, plus
/// alpha_extra times the misspecification regressor when the scenario puts
/// one in the treatment model.
pub fn gen_treatment(
    x: &DMatrix<f64>,
    u: &[f64],
    extra: Option<&[f64]>,
    coefs: &CoefficientSet,
    rng: &mut ChaCha8Rng,
) -> (Vec<u8>, Vec<f64>) {
    let n = x.nrows();
    let mut lp = vec![coefs.alpha[0]; n];
    accumulate_slopes(&mut lp, x, &coefs.alpha[1..]);
    if coefs.alpha_u != 0.0 {
        for (l, &ui) in lp.iter_mut().zip(u.iter()) {
            *l += coefs.alpha_u * ui;
        }
    }
    if let Some(e) = extra {
        if coefs.alpha_extra != 0.0 {
            for (l, &ei) in lp.iter_mut().zip(e.iter()) {
                *l += coefs.alpha_extra * ei;
            }
        }
    }
    let ps: Vec<f64> = lp.iter().map(|&v| logistic(v)).collect();
    let z: Vec<u8> = ps
        .iter()
        .map(|&p| (rng.random::<f64>() < p) as u8)
        .collect();
    (z, ps)
}

fn outcome_linear_predictor(
    x: &DMatrix<f64>,
    u: &[f64],
    intercept: f64,
    slopes: &[f64],
    beta_extra: f64,
    form: OutcomeForm,
) -> Vec<f64> {
    let n = x.nrows();
    let mut lp = vec![intercept; n];
    accumulate_slopes(&mut lp, x, slopes);
    if beta_extra != 0.0 {
        match form {
            OutcomeForm::Linear => {}
            OutcomeForm::PlusU => {
                for (l, &ui) in lp.iter_mut().zip(u.iter()) {
                    *l += beta_extra * ui;
                }
            }
            OutcomeForm::PlusQuadratic | OutcomeForm::PlusInteraction => {
                let e = extra_regressor(form, x).expect("form has a regressor");
                for (l, ei) in lp.iter_mut().zip(e) {
                    *l += beta_extra * ei;
                }
            }
        }
    }
    lp
}

/// Draw one binary outcome vector from a logistic model on the true
/// confounders. Negative controls pass `beta_z = 0`.
#[allow(clippy::too_many_arguments)]
pub fn gen_outcome(
    x: &DMatrix<f64>,
    u: &[f64],
    z: &[u8],
    intercept: f64,
    slopes: &[f64],
    beta_z: f64,
    beta_extra: f64,
    form: OutcomeForm,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let lp = outcome_linear_predictor(x, u, intercept, slopes, beta_extra, form);
    lp.iter()
        .zip(z.iter())
        .map(|(&l, &zi)| {
            let p = logistic(l + beta_z * f64::from(zi));
            (rng.random::<f64>() < p) as u8
        })
        .collect()
}

/// Force propensities outside (lower, upper) to exactly 0 or 1 and make the
/// treatment deterministic there.
pub fn apply_positivity_violation(
    true_ps: &[f64],
    z: &[u8],
    lower: f64,
    upper: f64,
) -> Result<(Vec<f64>, Vec<u8>)> {
    if !(lower < upper) {
        return Err(Error::InvalidInput(format!(
            "positivity cutoffs must satisfy lower < upper, got ({lower}, {upper})"
        )));
    }
    let mut ps = true_ps.to_vec();
    let mut z = z.to_vec();
    for i in 0..ps.len() {
        if ps[i] > upper {
            ps[i] = 1.0;
            z[i] = 1;
        } else if ps[i] < lower {
            ps[i] = 0.0;
            z[i] = 0;
        }
    }
    Ok((ps, z))
}

/// Add N(mu_e, sigma_e^2) noise to one column, returning the observed
/// matrix; the true matrix is untouched.
pub fn apply_measurement_error(
    x_true: &DMatrix<f64>,
    target_col: usize,
    mu_e: f64,
    sigma_e: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    if mu_e <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "measurement-error mean must be positive, got {mu_e}"
        )));
    }
    if sigma_e < 0.0 {
        return Err(Error::InvalidInput(format!(
            "measurement-error sd must be nonnegative, got {sigma_e}"
        )));
    }
    if target_col >= x_true.ncols() {
        return Err(Error::InvalidInput(format!(
            "target column {target_col} out of range for {} confounders",
            x_true.ncols()
        )));
    }
    let noise = Normal::new(mu_e, sigma_e)
        .map_err(|e| Error::InvalidInput(format!("bad noise parameters: {e}")))?;
    let mut x_obs = x_true.clone();
    {
        let mut col = x_obs.column_mut(target_col);
        for v in col.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(x_obs)
}

/// Marginal log odds ratio implied by a logistic model with baseline linear
/// predictor `lp0` (everything except the treatment term) and treatment
/// coefficient `theta`, averaged over the supplied population.
pub fn marginal_log_odds_ratio(lp0: &[f64], theta: f64) -> Result<f64> {
    if lp0.is_empty() {
        return Err(Error::InvalidInput("empty population".into()));
    }
    let n = lp0.len() as f64;
    let p1: f64 = lp0.iter().map(|&l| logistic(l + theta)).sum::<f64>() / n;
    let p0: f64 = lp0.iter().map(|&l| logistic(l)).sum::<f64>() / n;
    for p in [p1, p0] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!(
                "degenerate counterfactual mean {p}"
            )));
        }
    }
    Ok((p1 / (1.0 - p1)).ln() - (p0 / (1.0 - p0)).ln())
}

/// Oracle marginal effect of Z on Y* under the generating model: average the
/// two counterfactual outcome probabilities over the cohort and take the log
/// odds ratio of the averages.
pub fn true_marginal_effect(
    truth: &CoefficientSet,
    x_true: &DMatrix<f64>,
    u: &[f64],
    form: OutcomeForm,
) -> Result<f64> {
    if truth.beta_z_star == 0.0 {
        return Ok(0.0);
    }
    let lp0 = outcome_linear_predictor(
        x_true,
        u,
        truth.beta_star[0],
        &truth.beta_star[1..],
        truth.beta_extra_star,
        form,
    );
    marginal_log_odds_ratio(&lp0, truth.beta_z_star)
}

/// Generate one iteration's cohort, dispatching on the configured scenario.
///
/// All randomness comes from `rng`, which the caller derives from
/// (config.seed, iteration); identical inputs give bit-identical studies.
pub fn build_study(
    config: &ScenarioConfig,
    iteration: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedStudy> {
    config.validate()?;
    if iteration >= config.n_iterations {
        return Err(Error::InvalidInput(format!(
            "iteration {iteration} out of range for {} iterations",
            config.n_iterations
        )));
    }
    let n = config.n_subjects;
    let m = config.n_confounders;
    let form = OutcomeForm::for_scenario(config.scenario);

    let truth = sample_coefficients(config, rng);
    let x_true = gen_confounders(n, m, rng);
    let u: Vec<f64> = if config.scenario == Scenario::UnmeasuredConfounder {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    } else {
        vec![0.0; n]
    };
    let extra = extra_regressor(form, &x_true);

    let (z, true_ps) = gen_treatment(&x_true, &u, extra.as_deref(), &truth, rng);
    let (true_ps, z) = if config.scenario == Scenario::NonPositivity {
        let (lo, hi) = config.positivity_cutoffs;
        apply_positivity_violation(&true_ps, &z, lo, hi)?
    } else {
        (true_ps, z)
    };

    let y_star = gen_outcome(
        &x_true,
        &u,
        &z,
        truth.beta_star[0],
        &truth.beta_star[1..],
        truth.beta_z_star,
        truth.beta_extra_star,
        form,
        rng,
    );
    let y_neg: Vec<Vec<u8>> = truth
        .beta_neg
        .iter()
        .map(|nc| {
            gen_outcome(
                &x_true, &u, &z, nc.intercept, &nc.slopes, 0.0, nc.extra, form, rng,
            )
        })
        .collect();

    let x_observed = if config.scenario == Scenario::MeasurementError {
        let mu_e = draw_uniform(rng, MEASUREMENT_MU_RANGE.0, MEASUREMENT_MU_RANGE.1);
        let sigma_e = draw_uniform(rng, MEASUREMENT_SIGMA_RANGE.0, MEASUREMENT_SIGMA_RANGE.1);
        let coefs: &[f64] = match config.measurement_target {
            MeasurementTarget::OutcomeModel => &truth.beta_star[1..],
            MeasurementTarget::TreatmentModel => &truth.alpha[1..],
        };
        let target_col = coefs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .expect("at least one confounder");
        apply_measurement_error(&x_true, target_col, mu_e, sigma_e, rng)?
    } else {
        x_true.clone()
    };

    let theta_true = true_marginal_effect(&truth, &x_true, &u, form)?;

    Ok(SimulatedStudy {
        x_true,
        x_observed,
        u,
        z,
        y_star,
        y_neg,
        true_ps,
        truth,
        theta_true,
    })
}
