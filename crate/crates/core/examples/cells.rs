//! Scratch harness: run one cell with both calibration models and print the
//! quantities the acceptance criteria check.

use empcal_core::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 6 {
        eprintln!("usage: cells <scenario> <suitability> <n> <iters> <s_neg> [seed]");
        std::process::exit(2);
    }
    let scenario = match args[1].as_str() {
        "reference" => Scenario::Reference,
        "uc" => Scenario::UnmeasuredConfounder,
        "quad" => Scenario::QuadraticTerm,
        "inter" => Scenario::InteractionTerm,
        "nonpos" => Scenario::NonPositivity,
        "measerr" => Scenario::MeasurementError,
        other => panic!("bad scenario {other}"),
    };
    let suitability = match args[2].as_str() {
        "ideal" => Suitability::IdealSuitable,
        "random" => Suitability::RandomSuitable,
        "unsuitable" => Suitability::Unsuitable,
        other => panic!("bad suitability {other}"),
    };
    let cfg = ScenarioConfig {
        scenario,
        suitability,
        n_subjects: args[3].parse().unwrap(),
        n_iterations: args[4].parse().unwrap(),
        n_negative_controls: args[5].parse().unwrap(),
        seed: args.get(6).map_or(42, |s| s.parse().unwrap()),
        ..Default::default()
    };

    let mut n_failed = 0usize;
    let (mut cu, mut cf, mut cn) = (0usize, 0usize, 0usize);
    let (mut wu, mut wf) = (0.0f64, 0.0f64);
    let mut biases = Vec::new();
    let mut used = 0usize;
    let t0 = std::time::Instant::now();
    for it in 0..cfg.n_iterations {
        let est = match run_iteration_estimates(&cfg, it) {
            Ok(e) => e,
            Err(_) => {
                n_failed += 1;
                continue;
            }
        };
        let negatives: Vec<ControlEstimate> = est
            .controls
            .iter()
            .filter(|c| c.true_effect == 0.0)
            .copied()
            .collect();
        let (full, null) = match (
            fit_systematic_error_model(&est.controls),
            fit_null_model(&negatives),
        ) {
            (Ok(f), Ok(n)) => (f, n),
            _ => {
                n_failed += 1;
                continue;
            }
        };
        let (cal_f, cal_n) = match (
            calibrate_ci(&est.outcome, &full, 0.05),
            calibrate_ci(&est.outcome, &null, 0.05),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                n_failed += 1;
                continue;
            }
        };
        used += 1;
        let t = est.theta_true;
        let (lo_u, hi_u) = (
            est.outcome.theta_hat - 1.96 * est.outcome.se_hat,
            est.outcome.theta_hat + 1.96 * est.outcome.se_hat,
        );
        cu += usize::from(lo_u <= t && t <= hi_u);
        cf += usize::from(cal_f.ci_low <= t && t <= cal_f.ci_high);
        cn += usize::from(cal_n.ci_low <= t && t <= cal_n.ci_high);
        wu += hi_u - lo_u;
        wf += cal_f.ci_high - cal_f.ci_low;
        biases.push(est.outcome.theta_hat - t);
    }
    let k = used as f64;
    let mean_bias = biases.iter().sum::<f64>() / k;
    let sd = (biases
        .iter()
        .map(|b| (b - mean_bias) * (b - mean_bias))
        .sum::<f64>()
        / (k - 1.0))
        .sqrt();
    println!(
        "{} {} n={} iters={} S={}: cov_u={:.3} cov_full={:.3} cov_null={:.3} wid_u={:.4} \
         wid_full={:.4} bias={:+.4} sd={:.4} failed={} [{:.0}s]",
        args[1],
        args[2],
        cfg.n_subjects,
        cfg.n_iterations,
        cfg.n_negative_controls,
        cu as f64 / k,
        cf as f64 / k,
        cn as f64 / k,
        wu / k,
        wf / k,
        mean_bias,
        sd,
        n_failed,
        t0.elapsed().as_secs_f64(),
    );
}
