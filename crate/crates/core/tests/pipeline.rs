//! Cross-module pipeline checks: determinism across parallelism, estimand
//! recovery, and property-based invariants.

use proptest::prelude::*;

use empcal_core::output::{funnel_csv, iterations_csv, summary_csv};
use empcal_core::{
    build_funnel_rows, calibrate_ci, run_iteration, run_scenario, stabilized_weights, Arm,
    EffectEstimate, ErrorModelKind, OutcomeId, Scenario, ScenarioConfig, Suitability,
    SystematicErrorModel,
};

fn small_cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        scenario: Scenario::UnmeasuredConfounder,
        suitability: Suitability::RandomSuitable,
        n_subjects: 1_500,
        n_confounders: 3,
        n_negative_controls: 3,
        n_iterations: 5,
        seed,
        ..Default::default()
    }
}

#[test]
fn scenario_outputs_identical_across_thread_counts() {
    let cfg = small_cfg(4242);
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let run = pool.install(|| run_scenario(&cfg)).unwrap();
        let rows = build_funnel_rows(&run.records).unwrap();
        (
            summary_csv(&cfg, &run.summary),
            iterations_csv(&run.records),
            funnel_csv(&rows),
        )
    };
    let (s1, i1, f1) = render(1);
    let (s8, i8, f8) = render(8);
    assert_eq!(s1, s8);
    assert_eq!(i1, i8);
    assert_eq!(f1, f8);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = small_cfg(7);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.summary, b.summary);
}

#[test]
fn reference_recovers_the_marginal_estimand() {
    // Mean(theta_hat - theta_true) within 2 Monte Carlo standard errors of
    // zero in the unbiased scenario.
    let cfg = ScenarioConfig {
        scenario: Scenario::Reference,
        suitability: Suitability::RandomSuitable,
        n_subjects: 20_000,
        n_confounders: 10,
        n_negative_controls: 5,
        n_iterations: 60,
        seed: 2024,
        ..Default::default()
    };
    let run = run_scenario(&cfg).unwrap();
    let biases: Vec<f64> = run
        .records
        .iter()
        .map(|r| r.uncal.theta_hat - r.theta_true)
        .collect();
    let k = biases.len() as f64;
    let mean = biases.iter().sum::<f64>() / k;
    let sd = (biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (k - 1.0)).sqrt();
    let mcse = sd / k.sqrt();
    assert!(
        mean.abs() < 2.0 * mcse,
        "mean bias {mean} vs 2 mcse {}",
        2.0 * mcse
    );
}

#[test]
fn record_wald_interval_identity() {
    let cfg = small_cfg(99);
    let rec = run_iteration(&cfg, 0).unwrap();
    assert!((rec.uncal.ci_low - (rec.uncal.theta_hat - 1.96 * rec.uncal.se_hat)).abs() < 1e-15);
    assert!((rec.uncal.ci_high - (rec.uncal.theta_hat + 1.96 * rec.uncal.se_hat)).abs() < 1e-15);
    assert!((rec.cal.se_cal - (rec.cal.ci_high - rec.cal.ci_low) / (2.0 * 1.96)).abs() < 1e-12);
    assert!(rec.cal.ci_low <= rec.cal.theta_cal && rec.cal.theta_cal <= rec.cal.ci_high);
}

#[test]
fn funnel_significance_recounts_coverage() {
    let cfg = small_cfg(31);
    let run = run_scenario(&cfg).unwrap();
    let rows = build_funnel_rows(&run.records).unwrap();
    let frac_sig = rows
        .iter()
        .filter(|r| !r.calibrated && r.significant)
        .count() as f64
        / run.records.len() as f64;
    let cov = empcal_core::coverage(&run.records, Arm::Uncal).unwrap();
    assert!((frac_sig - (1.0 - cov)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stabilized_weights_positive_and_scale_free(
        seed in 0u64..1000,
        prevalence in 0.2f64..0.8,
    ) {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let z: Vec<u8> = (0..n).map(|_| (rng.random::<f64>() < prevalence) as u8).collect();
        if z.iter().all(|&v| v == 0) || z.iter().all(|&v| v == 1) {
            return Ok(());
        }
        let ps: Vec<f64> = (0..n).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
        let w = stabilized_weights(&z, &ps).unwrap();
        prop_assert!(w.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn calibration_interval_brackets_point(
        theta in -1.5f64..1.5,
        se in 0.01f64..0.5,
        a in -0.3f64..0.3,
        b in -0.5f64..0.5,
        sigma in 0.001f64..0.3,
        d in 0.0f64..0.5,
    ) {
        let model = SystematicErrorModel {
            mean_intercept: a,
            mean_slope: b,
            log_sd_intercept: sigma.ln(),
            log_sd_slope: d,
            kind: ErrorModelKind::Full,
        };
        let est = EffectEstimate { theta_hat: theta, se_hat: se, outcome_id: OutcomeId::OutcomeOfInterest };
        if let Ok(cal) = calibrate_ci(&est, &model, 0.05) {
            prop_assert!(cal.ci_low <= cal.theta_cal);
            prop_assert!(cal.theta_cal <= cal.ci_high);
            prop_assert!(cal.se_cal > 0.0);
            prop_assert!((0.0..=1.0).contains(&cal.p_cal));
            // Inversion consistency.
            let back = model.predictive_mean(cal.theta_cal);
            prop_assert!((back - theta).abs() < 1e-8);
        }
    }
}
