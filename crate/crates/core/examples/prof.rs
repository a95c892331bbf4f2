// scratch profiling via example
use empcal_core::*;
use std::time::Instant;
fn main() {
    let cfg = ScenarioConfig {
        scenario: Scenario::UnmeasuredConfounder,
        suitability: Suitability::RandomSuitable,
        n_subjects: 20_000,
        n_confounders: 10,
        n_negative_controls: 5,
        n_iterations: 200,
        seed: 42,
        ..Default::default()
    };
    let t0 = Instant::now();
    let mut rng = empcal_core::rng::derive_stream(42, &[1, 0]);
    let study = build_study(&cfg, 0, &mut rng).unwrap();
    println!("build_study: {:?}", t0.elapsed());

    let t = Instant::now();
    let ps = propensity_scores(&study.x_observed, &study.z).unwrap();
    println!("propensity: {:?}", t.elapsed());
    let w = stabilized_weights(&study.z, &ps).unwrap();

    let t = Instant::now();
    let _e = estimate_effect(&study.z, &study.y_star, &w).unwrap();
    println!("one estimate_effect: {:?}", t.elapsed());

    let t = Instant::now();
    for s in 0..5 { let _ = fit_negative_control(&study, s).unwrap(); }
    println!("5 nc fits: {:?}", t.elapsed());

    let nc = fit_negative_control(&study, 0).unwrap();
    let t = Instant::now();
    let mut rng2 = empcal_core::rng::derive_stream(42, &[2, 0, 0, 0]);
    let pc = synthesize_positive_control(&nc, &study, 0.693, &mut rng2).unwrap();
    println!("one synthesis: {:?}", t.elapsed());
    let t = Instant::now();
    let _ = estimate_effect(&study.z, &pc.y_pos, &w).unwrap();
    println!("one pc estimate: {:?}", t.elapsed());

    let t = Instant::now();
    let rec = run_iteration(&cfg, 0).unwrap();
    println!("full run_iteration: {:?}  (cal p {})", t.elapsed(), rec.cal.p_cal);
}
