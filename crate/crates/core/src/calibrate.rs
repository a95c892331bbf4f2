//! Empirical calibration: the empirical null distribution, the systematic
//! error model, and calibrated p-values and confidence intervals.
//!
//! The bias of an estimate with true effect theta is modeled as Gaussian
//! with mean `a + b*theta` and standard deviation `exp(c + d*|theta|)`; the
//! null model is the constant special case (b = d = 0) fit from negative
//! controls alone.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf;

use crate::error::{Error, Result};
use crate::estimate::EffectEstimate;
use crate::optim::nelder_mead;

/// Lower bound on log sigma; bounds the likelihood when controls are exact.
const LN_SIGMA_FLOOR: f64 = -13.815510557964274; // ln(1e-6)
/// Box constraint on the log-sd slope; with a handful of design points the
/// parameter is weakly identified and unbounded fits produce predictive
/// distributions whose tails never close.
const MAX_LOG_SD_SLOPE: f64 = 1.0;
const NM_FATOL: f64 = 1e-8;
const NM_MAX_ITER: usize = 2_000;
const N_RESTARTS: usize = 8;
/// Root-finding tolerance on the calibrated interval endpoints.
const ROOT_TOL: f64 = 1e-6;

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// A control's estimate paired with its known true effect (0 for negative
/// controls, the nominal marginal effect for synthetic positive controls).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEstimate {
    pub theta_hat: f64,
    pub se_hat: f64,
    pub true_effect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModelKind {
    Null,
    Full,
}

/// Fitted parameters of the bias distribution as a function of true effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystematicErrorModel {
    pub mean_intercept: f64,
    pub mean_slope: f64,
    pub log_sd_intercept: f64,
    pub log_sd_slope: f64,
    pub kind: ErrorModelKind,
}

impl SystematicErrorModel {
    pub fn bias_mean(&self, theta: f64) -> f64 {
        self.mean_intercept + self.mean_slope * theta
    }

    pub fn bias_sd(&self, theta: f64) -> f64 {
        (self.log_sd_intercept + self.log_sd_slope * theta.abs()).exp()
    }

    /// Mean of the predictive distribution of theta-hat given true theta.
    pub fn predictive_mean(&self, theta: f64) -> f64 {
        theta + self.bias_mean(theta)
    }

    /// Standard deviation of the predictive distribution given the
    /// estimate's own standard error.
    pub fn predictive_sd(&self, theta: f64, se_hat: f64) -> f64 {
        let sd = self.bias_sd(theta);
        (sd * sd + se_hat * se_hat).sqrt()
    }
}

/// Calibrated point estimate, interval, and p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedEstimate {
    pub theta_cal: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Defined from the interval width: (ci_high - ci_low) / (2 * 1.96).
    pub se_cal: f64,
    pub p_cal: f64,
}

fn validate_controls(controls: &[ControlEstimate]) -> Result<()> {
    for c in controls {
        if !(c.se_hat > 0.0 && c.se_hat.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "control standard error must be positive and finite, got {}",
                c.se_hat
            )));
        }
        if !c.theta_hat.is_finite() || !c.true_effect.is_finite() {
            return Err(Error::InvalidInput("non-finite control estimate".into()));
        }
    }
    Ok(())
}

fn gaussian_nll(resid: f64, variance: f64) -> f64 {
    0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + resid * resid / variance)
}

/// Fit the empirical null: maximize the likelihood of the negative-control
/// estimates under theta-hat_i ~ N(mu, sigma^2 + se_i^2).
pub fn fit_null_model(negatives: &[ControlEstimate]) -> Result<SystematicErrorModel> {
    if negatives.len() < 2 {
        return Err(Error::TooFewControls {
            needed: 2,
            got: negatives.len(),
        });
    }
    validate_controls(negatives)?;
    if negatives.iter().any(|c| c.true_effect != 0.0) {
        return Err(Error::InvalidInput(
            "null model requires all control true effects to be zero".into(),
        ));
    }

    let data: Vec<(f64, f64)> = negatives
        .iter()
        .map(|c| (c.theta_hat, c.se_hat * c.se_hat))
        .collect();
    let nll = |p: &[f64]| -> f64 {
        let mu = p[0];
        let c = p[1].max(LN_SIGMA_FLOOR);
        let s2 = (2.0 * c).exp();
        data.iter()
            .map(|&(t, v)| gaussian_nll(t - mu, s2 + v))
            .sum()
    };

    let n = negatives.len() as f64;
    let mean = negatives.iter().map(|c| c.theta_hat).sum::<f64>() / n;
    let sd = (negatives
        .iter()
        .map(|c| (c.theta_hat - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let c0 = sd.max(1e-4).ln();

    let best = multistart(&nll, &[mean, c0], &[0.2, 1.0]);
    if !best.value.is_finite() {
        return Err(Error::OptimizationFailed(
            "null-model likelihood is not finite at the optimum".into(),
        ));
    }
    Ok(SystematicErrorModel {
        mean_intercept: best.point[0],
        mean_slope: 0.0,
        log_sd_intercept: best.point[1].max(LN_SIGMA_FLOOR),
        log_sd_slope: 0.0,
        kind: ErrorModelKind::Null,
    })
}

/// Fit the full systematic error model from negative and positive controls:
/// theta-hat_i ~ N(theta_i + a + b*theta_i, exp(2(c + d|theta_i|)) + se_i^2).
pub fn fit_systematic_error_model(controls: &[ControlEstimate]) -> Result<SystematicErrorModel> {
    if controls.len() < 4 {
        return Err(Error::TooFewControls {
            needed: 4,
            got: controls.len(),
        });
    }
    validate_controls(controls)?;
    if !controls.iter().any(|c| c.true_effect == 0.0) {
        return Err(Error::InvalidInput(
            "full error model needs negative controls (true effect 0)".into(),
        ));
    }
    let mut positives: Vec<f64> = controls
        .iter()
        .map(|c| c.true_effect)
        .filter(|&t| t > 0.0)
        .collect();
    positives.sort_by(|a, b| a.total_cmp(b));
    positives.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if positives.len() < 2 {
        return Err(Error::InsufficientEffectSpread);
    }

    let data: Vec<(f64, f64, f64)> = controls
        .iter()
        .map(|c| (c.theta_hat, c.true_effect, c.se_hat * c.se_hat))
        .collect();
    let nll = |p: &[f64]| -> f64 {
        let (a, b, d) = (p[0], p[1], p[3]);
        let c = p[2].max(LN_SIGMA_FLOOR);
        if b <= -0.99 || !(-MAX_LOG_SD_SLOPE..=MAX_LOG_SD_SLOPE).contains(&d) {
            return 1e15;
        }
        data.iter()
            .map(|&(t_hat, t, v)| {
                let resid = t_hat - (t + a + b * t);
                let s2 = (2.0 * (c + d * t.abs())).exp();
                gaussian_nll(resid, s2 + v)
            })
            .sum()
    };

    // Moment-based start: regress the residuals on the true effects.
    let n = data.len() as f64;
    let mean_t = data.iter().map(|d| d.1).sum::<f64>() / n;
    let mean_e = data.iter().map(|d| d.0 - d.1).sum::<f64>() / n;
    let var_t = data.iter().map(|d| (d.1 - mean_t).powi(2)).sum::<f64>() / n;
    let cov = data
        .iter()
        .map(|d| (d.1 - mean_t) * (d.0 - d.1 - mean_e))
        .sum::<f64>()
        / n;
    let b0 = if var_t > 0.0 { cov / var_t } else { 0.0 };
    let a0 = mean_e - b0 * mean_t;
    let resid_sd = (data
        .iter()
        .map(|d| (d.0 - d.1 - a0 - b0 * d.1).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let c0 = resid_sd.max(1e-3).ln();

    let best = multistart(&nll, &[a0, b0, c0, 0.0], &[0.2, 0.3, 1.0, 0.3]);
    if !best.value.is_finite() || best.value >= 1e15 {
        return Err(Error::OptimizationFailed(
            "systematic-error-model likelihood did not yield a finite optimum".into(),
        ));
    }
    Ok(SystematicErrorModel {
        mean_intercept: best.point[0],
        mean_slope: best.point[1],
        log_sd_intercept: best.point[2].max(LN_SIGMA_FLOOR),
        log_sd_slope: best.point[3],
        kind: ErrorModelKind::Full,
    })
}

/// Run Nelder-Mead from the base start plus jittered restarts; the jitter
/// stream is fixed, so fits are pure functions of their inputs.
fn multistart<F: Fn(&[f64]) -> f64>(
    nll: &F,
    start: &[f64],
    jitter_scale: &[f64],
) -> crate::optim::OptimResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_CA1B);
    let mut best = nelder_mead(nll, start, 0.25, NM_MAX_ITER, NM_FATOL);
    for _ in 0..N_RESTARTS - 1 {
        let jittered: Vec<f64> = start
            .iter()
            .zip(jitter_scale)
            .map(|(&s, &sc)| s + sc * (rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let r = nelder_mead(nll, &jittered, 0.25, NM_MAX_ITER, NM_FATOL);
        if r.value < best.value {
            best = r;
        }
    }
    best
}

/// Two-sided calibrated p-value from the empirical null:
/// p = 2 (1 - Phi(|theta-hat - mu| / sqrt(sigma^2 + se^2))).
pub fn calibrate_pvalue(
    estimate: &EffectEstimate,
    null_model: &SystematicErrorModel,
) -> Result<f64> {
    if null_model.kind != ErrorModelKind::Null {
        return Err(Error::InvalidInput(
            "p-value calibration requires a null-kind model".into(),
        ));
    }
    Ok(pvalue_at_null(estimate, null_model))
}

fn pvalue_at_null(estimate: &EffectEstimate, model: &SystematicErrorModel) -> f64 {
    let mu = model.bias_mean(0.0);
    let sd = model.predictive_sd(0.0, estimate.se_hat);
    2.0 * (1.0 - std_normal_cdf((estimate.theta_hat - mu).abs() / sd))
}

/// Invert the predictive distribution of theta-hat around the observed
/// estimate to produce a calibrated point estimate and interval.
///
/// `ci_low` solves P(theta-hat >= observed | theta) = alpha/2 and `ci_high`
/// solves P(theta-hat <= observed | theta) = alpha/2, each by bisection on
/// theta. The p-value is taken from the model's predictive at theta = 0,
/// which reduces to `calibrate_pvalue` for null-kind models.
pub fn calibrate_ci(
    estimate: &EffectEstimate,
    model: &SystematicErrorModel,
    alpha: f64,
) -> Result<CalibratedEstimate> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if model.mean_slope <= -1.0 {
        return Err(Error::InvalidInput(format!(
            "calibration requires mean slope > -1, got {}",
            model.mean_slope
        )));
    }
    let obs = estimate.theta_hat;
    let se = estimate.se_hat;
    let theta_cal = (obs - model.mean_intercept) / (1.0 + model.mean_slope);
    let half = alpha / 2.0;

    // Standardized distance from the predictive mean to the observation.
    let zdist = |theta: f64| (model.predictive_mean(theta) - obs) / model.predictive_sd(theta, se);
    let scale = model.predictive_sd(theta_cal, se).min(1.0).max(1e-8);

    // Lower endpoint: Phi(zdist) = alpha/2 below theta_cal.
    let g_low = |theta: f64| std_normal_cdf(zdist(theta)) - half;
    let lo = bracket(&g_low, theta_cal, -scale, "lower")?;
    let ci_low = bisect(&g_low, lo, theta_cal);

    // Upper endpoint: 1 - Phi(zdist) = alpha/2 above theta_cal.
    let g_high = |theta: f64| (1.0 - std_normal_cdf(zdist(theta))) - half;
    let hi = bracket(&g_high, theta_cal, scale, "upper")?;
    let ci_high = bisect(&g_high, hi, theta_cal);

    let se_cal = (ci_high - ci_low) / (2.0 * 1.96);
    Ok(CalibratedEstimate {
        theta_cal,
        ci_low,
        ci_high,
        se_cal,
        p_cal: pvalue_at_null(estimate, model),
    })
}

/// Find a point on the chosen side of theta_cal where g < 0, stepping
/// geometrically outward from a quarter predictive-sd. When the predictive
/// sd grows with |theta| the tail equation can turn around; scanning from
/// inside out catches the crossing when one exists.
fn bracket<F: Fn(f64) -> f64>(
    g: &F,
    theta_cal: f64,
    step: f64,
    side: &'static str,
) -> Result<f64> {
    let mut offset = 0.25 * step;
    for _ in 0..64 {
        let candidate = theta_cal + offset;
        if g(candidate) < 0.0 {
            return Ok(candidate);
        }
        offset *= 2.0;
    }
    Err(Error::NonMonotonePredictive { side })
}

/// Bisect between an endpoint where g < 0 and theta_cal where g > 0.
fn bisect<F: Fn(f64) -> f64>(g: &F, mut neg: f64, mut pos: f64) -> f64 {
    for _ in 0..200 {
        if (neg - pos).abs() < ROOT_TOL {
            break;
        }
        let mid = 0.5 * (neg + pos);
        if g(mid) < 0.0 {
            neg = mid;
        } else {
            pos = mid;
        }
    }
    0.5 * (neg + pos)
}
