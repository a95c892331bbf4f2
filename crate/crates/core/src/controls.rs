//! Negative-control outcome models and synthetic positive controls.
//!
//! Each negative control is refit on the observed data; its coefficients are
//! reused to generate a positive control whose generating treatment
//! coefficient is the target effect plus the control's fitted treatment
//! coefficient, so the synthetic control inherits the residual bias the
//! negative control exhibited while the target remains its nominal truth.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimate::{fit_logistic, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::sim::{logistic, SimulatedStudy};

/// Unweighted logistic fit of one negative control on intercept, treatment,
/// and the observed confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeControlFit {
    pub control_id: usize,
    pub intercept_hat: f64,
    pub slope_hats: Vec<f64>,
    /// Fitted coefficient on treatment; systematically nonzero indicates
    /// residual bias.
    pub bias_coef_hat: f64,
}

/// A synthesized positive-control outcome with its known nominal truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveControl {
    pub source_control: usize,
    pub target_effect: f64,
    pub y_pos: Vec<u8>,
    /// The target log odds ratio itself; the carried bias addend is
    /// excluded. The gap between this conditional target and the marginal
    /// estimand is how the error model learns bias as a function of effect
    /// size.
    pub nominal_true_effect: f64,
}

/// Fit negative control `s` on intercept + treatment + observed confounders.
pub fn fit_negative_control(study: &SimulatedStudy, s: usize) -> Result<NegativeControlFit> {
    let y = study
        .y_neg
        .get(s)
        .ok_or_else(|| Error::InvalidInput(format!("no negative control {s}")))?;
    let n = study.x_observed.nrows();
    let m = study.x_observed.ncols();
    let mut design = DMatrix::zeros(n, m + 2);
    design.column_mut(0).fill(1.0);
    for (i, &zi) in study.z.iter().enumerate() {
        design[(i, 1)] = f64::from(zi);
    }
    design.columns_mut(2, m).copy_from(&study.x_observed);
    let fit = fit_logistic(&design, y, None, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    Ok(NegativeControlFit {
        control_id: s,
        intercept_hat: fit.coefficients[0],
        bias_coef_hat: fit.coefficients[1],
        slope_hats: fit.coefficients.as_slice()[2..].to_vec(),
    })
}

/// Baseline linear predictor of a fitted control model over the observed
/// confounders (no treatment term).
fn fitted_baseline(fit: &NegativeControlFit, x_observed: &DMatrix<f64>) -> Vec<f64> {
    let n = x_observed.nrows();
    let mut lp = vec![fit.intercept_hat; n];
    for (j, &s) in fit.slope_hats.iter().enumerate() {
        let col = x_observed.column(j);
        for (l, v) in lp.iter_mut().zip(col.iter()) {
            *l += s * v;
        }
    }
    lp
}

/// Generate a positive-control outcome with target log odds ratio `theta_t`
/// by reusing the fitted negative-control coefficients; the generating
/// treatment coefficient is `theta_t + bias_coef_hat`.
pub fn synthesize_positive_control(
    fit: &NegativeControlFit,
    study: &SimulatedStudy,
    theta_t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PositiveControl> {
    if !(theta_t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "positive-control target must be positive, got {theta_t}"
        )));
    }
    let lp0 = fitted_baseline(fit, &study.x_observed);
    let coef = theta_t + fit.bias_coef_hat;
    let y_pos: Vec<u8> = lp0
        .iter()
        .zip(study.z.iter())
        .map(|(&l, &zi)| {
            let p = logistic(l + coef * f64::from(zi));
            (rng.random::<f64>() < p) as u8
        })
        .collect();
    Ok(PositiveControl {
        source_control: fit.control_id,
        target_effect: theta_t,
        y_pos,
        nominal_true_effect: theta_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Scenario, ScenarioConfig, Suitability};
    use crate::estimate::{estimate_effect, propensity_scores, stabilized_weights};
    use crate::rng::{derive_stream, STREAM_STUDY, STREAM_SYNTHESIS};
    use crate::sim::build_study;

    fn small_config(scenario: Scenario, suitability: Suitability, n: usize) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            suitability,
            n_subjects: n,
            n_confounders: 3,
            n_negative_controls: 2,
            n_iterations: 200,
            ..Default::default()
        }
    }

    #[test]
    fn reference_fit_centers_bias_coefficient_at_zero() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 50_000);
        let mut rng = derive_stream(3, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 0).unwrap();
        // Refit to get a standard error for the treatment coefficient.
        let n = study.x_observed.nrows();
        let mut design = DMatrix::zeros(n, 5);
        design.column_mut(0).fill(1.0);
        for (i, &zi) in study.z.iter().enumerate() {
            design[(i, 1)] = f64::from(zi);
        }
        design.columns_mut(2, 3).copy_from(&study.x_observed);
        let full = fit_logistic(&design, &study.y_neg[0], None, 25, 1e-8).unwrap();
        let se = full.model_covariance[(1, 1)].sqrt();
        assert!(
            fit.bias_coef_hat.abs() < 3.0 * se,
            "bias coef {} vs se {se}",
            fit.bias_coef_hat
        );
    }

    #[test]
    fn confounded_controls_show_systematic_bias_coefficient() {
        let iters = 100;
        let cfg = small_config(
            Scenario::UnmeasuredConfounder,
            Suitability::RandomSuitable,
            4_000,
        );
        let mut abs_biases = Vec::with_capacity(iters);
        for it in 0..iters {
            let mut rng = derive_stream(5, &[STREAM_STUDY, it as u64]);
            let study = build_study(&cfg, it, &mut rng).unwrap();
            let fit = fit_negative_control(&study, 0).unwrap();
            abs_biases.push(fit.bias_coef_hat.abs());
        }
        let mean = abs_biases.iter().sum::<f64>() / iters as f64;
        let var = abs_biases
            .iter()
            .map(|b| (b - mean) * (b - mean))
            .sum::<f64>()
            / (iters - 1) as f64;
        let mc_se = (var / iters as f64).sqrt();
        assert!(mean > 2.0 * mc_se, "mean |b| {mean} vs mc se {mc_se}");
    }

    #[test]
    fn fitted_slopes_recover_generating_slopes() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 200_000);
        let mut rng = derive_stream(8, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 1).unwrap();
        let truth = &study.truth.beta_neg[1];
        for (got, want) in fit.slope_hats.iter().zip(&truth.slopes) {
            assert!((got - want).abs() < 0.05, "slope {got} vs {want}");
        }
        assert!((fit.intercept_hat - truth.intercept).abs() < 0.05);
    }

    #[test]
    fn zero_adjustment_uses_exact_target_coefficient() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 2_000);
        let mut rng = derive_stream(9, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = NegativeControlFit {
            control_id: 0,
            intercept_hat: 0.1,
            slope_hats: vec![0.2, -0.3, 0.05],
            bias_coef_hat: 0.0,
        };
        let theta_t = 2.0f64.ln();
        let mut r1 = derive_stream(9, &[STREAM_SYNTHESIS, 0, 0]);
        let pc = synthesize_positive_control(&fit, &study, theta_t, &mut r1).unwrap();

        // Regenerate manually with the target coefficient alone.
        let mut r2 = derive_stream(9, &[STREAM_SYNTHESIS, 0, 0]);
        let manual: Vec<u8> = (0..2_000)
            .map(|i| {
                let lp0 = 0.1 + 0.2 * study.x_observed[(i, 0)] - 0.3 * study.x_observed[(i, 1)]
                    + 0.05 * study.x_observed[(i, 2)];
                let p = logistic(lp0 + theta_t * f64::from(study.z[i]));
                (r2.random::<f64>() < p) as u8
            })
            .collect();
        assert_eq!(pc.y_pos, manual);
        assert_eq!(pc.nominal_true_effect, theta_t);
    }

    #[test]
    fn rejects_nonpositive_target() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 100);
        let mut rng = derive_stream(10, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 0).unwrap();
        let mut r = derive_stream(10, &[STREAM_SYNTHESIS, 0]);
        assert!(synthesize_positive_control(&fit, &study, 0.0, &mut r).is_err());
        assert!(synthesize_positive_control(&fit, &study, -0.1, &mut r).is_err());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 1_000);
        let mut rng = derive_stream(11, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 0).unwrap();
        let a = synthesize_positive_control(
            &fit,
            &study,
            0.5,
            &mut derive_stream(11, &[STREAM_SYNTHESIS, 0, 3]),
        )
        .unwrap();
        let b = synthesize_positive_control(
            &fit,
            &study,
            0.5,
            &mut derive_stream(11, &[STREAM_SYNTHESIS, 0, 3]),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn raising_target_raises_treated_outcome_fraction() {
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 20_000);
        let mut rng = derive_stream(12, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 0).unwrap();
        let mut last = -1.0;
        for (k, theta_t) in [0.2, 0.6, 1.2, 2.0].iter().enumerate() {
            // Common random numbers across targets.
            let mut r = derive_stream(12, &[STREAM_SYNTHESIS, 0, 0]);
            let pc = synthesize_positive_control(&fit, &study, *theta_t, &mut r).unwrap();
            let (mut hit, mut tot) = (0f64, 0f64);
            for i in 0..20_000 {
                if study.z[i] == 1 {
                    hit += f64::from(pc.y_pos[i]);
                    tot += 1.0;
                }
            }
            let frac = hit / tot;
            assert!(frac > last, "not increasing at target index {k}");
            last = frac;
        }
    }

    #[test]
    fn positive_control_recovery_end_to_end() {
        // The weighted estimate recovers the marginal effect implied by the
        // generating model; against the conditional target itself it falls
        // short by the non-collapsibility attenuation.
        let cfg = small_config(Scenario::Reference, Suitability::RandomSuitable, 200_000);
        let mut rng = derive_stream(13, &[STREAM_STUDY, 0]);
        let study = build_study(&cfg, 0, &mut rng).unwrap();
        let fit = fit_negative_control(&study, 0).unwrap();
        let mut r = derive_stream(13, &[STREAM_SYNTHESIS, 0, 1]);
        let theta_t = 2.0f64.ln();
        let pc = synthesize_positive_control(&fit, &study, theta_t, &mut r).unwrap();
        let ps = propensity_scores(&study.x_observed, &study.z).unwrap();
        let w = stabilized_weights(&study.z, &ps).unwrap();
        let est = estimate_effect(&study.z, &pc.y_pos, &w).unwrap();

        let lp0: Vec<f64> = (0..200_000)
            .map(|i| {
                let mut v = fit.intercept_hat;
                for (j, s) in fit.slope_hats.iter().enumerate() {
                    v += s * study.x_observed[(i, j)];
                }
                v
            })
            .collect();
        let marginal =
            crate::sim::marginal_log_odds_ratio(&lp0, theta_t + fit.bias_coef_hat).unwrap();
        assert!(
            (est.theta_hat - marginal).abs() < 0.05,
            "estimate {} vs implied marginal {marginal}",
            est.theta_hat
        );
        assert!(
            est.theta_hat < pc.nominal_true_effect,
            "estimate {} should undershoot the conditional target {theta_t}",
            est.theta_hat
        );
    }

    #[test]
    fn bias_carries_over_from_source_control() {
        // Estimation bias of the positive control tracks the estimation bias
        // of its source negative control, averaged over iterations, up to
        // the non-collapsibility attenuation of the target itself.
        let iters = 100;
        let cfg = small_config(
            Scenario::UnmeasuredConfounder,
            Suitability::RandomSuitable,
            10_000,
        );
        let (mut pc_bias_sum, mut nc_bias_sum) = (0.0, 0.0);
        for it in 0..iters {
            let mut rng = derive_stream(17, &[STREAM_STUDY, it as u64]);
            let study = build_study(&cfg, it, &mut rng).unwrap();
            let ps = propensity_scores(&study.x_observed, &study.z).unwrap();
            let w = stabilized_weights(&study.z, &ps).unwrap();

            let nc_est = estimate_effect(&study.z, &study.y_neg[0], &w).unwrap();
            let fit = fit_negative_control(&study, 0).unwrap();
            let mut r = derive_stream(17, &[STREAM_SYNTHESIS, it as u64, 0, 0]);
            let pc = synthesize_positive_control(&fit, &study, 1.5f64.ln(), &mut r).unwrap();
            let pc_est = estimate_effect(&study.z, &pc.y_pos, &w).unwrap();

            nc_bias_sum += nc_est.theta_hat;
            pc_bias_sum += pc_est.theta_hat - pc.nominal_true_effect;
        }
        let k = iters as f64;
        let (nc_mean, pc_mean) = (nc_bias_sum / k, pc_bias_sum / k);
        assert!(
            (pc_mean - nc_mean).abs() < 0.1,
            "pc bias {pc_mean} vs nc bias {nc_mean}"
        );
    }
}
