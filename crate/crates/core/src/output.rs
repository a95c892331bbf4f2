//! CSV and JSON rendering of run outputs.
//!
//! Floats are rendered with 17 significant digits so that identical runs
//! produce byte-identical files regardless of parallelism.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::config::ScenarioConfig;
use crate::metrics::{FunnelRow, IterationRecord, ScenarioSummary};
use crate::runner::RunManifest;

/// 17-significant-digit rendering; round-trips f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SUMMARY_HEADER: &str = "scenario,suitability,error_model,n,iterations,coverage_uncal,\
coverage_cal,std_abs_bias_uncal,std_abs_bias_cal,ci_width_uncal,ci_width_cal,\
control_cal_coverage,n_failed";

pub const ITERATIONS_HEADER: &str =
    "iteration,arm,theta_true,theta,se,ci_low,ci_high,covered,p,control_cal_coverage";

pub const FUNNEL_HEADER: &str = "iteration,arm,bias,se,significant";

/// One-line summary CSV.
pub fn summary_csv(config: &ScenarioConfig, summary: &ScenarioSummary) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        config.scenario.as_str(),
        config.suitability.as_str(),
        config.error_model.as_str(),
        config.n_subjects,
        config.n_iterations,
        fmt_f64(summary.coverage_uncal),
        fmt_f64(summary.coverage_cal),
        fmt_f64(summary.mean_std_abs_bias_uncal),
        fmt_f64(summary.mean_std_abs_bias_cal),
        fmt_f64(summary.mean_ci_width_uncal),
        fmt_f64(summary.mean_ci_width_cal),
        fmt_f64(summary.mean_control_cal_coverage),
        summary.n_failed,
    );
    out
}

/// Two rows per iteration (uncalibrated then calibrated).
pub fn iterations_csv(records: &[IterationRecord]) -> String {
    let mut out = String::new();
    out.push_str(ITERATIONS_HEADER);
    out.push('\n');
    for r in records {
        let wald_p = {
            let z = (r.uncal.theta_hat / r.uncal.se_hat).abs();
            2.0 * (1.0 - crate::calibrate::std_normal_cdf(z))
        };
        let covered_u = r.uncal.ci_low <= r.theta_true && r.theta_true <= r.uncal.ci_high;
        let _ = writeln!(
            out,
            "{},uncal,{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.theta_true),
            fmt_f64(r.uncal.theta_hat),
            fmt_f64(r.uncal.se_hat),
            fmt_f64(r.uncal.ci_low),
            fmt_f64(r.uncal.ci_high),
            u8::from(covered_u),
            fmt_f64(wald_p),
            fmt_f64(r.control_cal_coverage),
        );
        let covered_c = r.cal.ci_low <= r.theta_true && r.theta_true <= r.cal.ci_high;
        let _ = writeln!(
            out,
            "{},cal,{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.theta_true),
            fmt_f64(r.cal.theta_cal),
            fmt_f64(r.cal.se_cal),
            fmt_f64(r.cal.ci_low),
            fmt_f64(r.cal.ci_high),
            u8::from(covered_c),
            fmt_f64(r.cal.p_cal),
            fmt_f64(r.control_cal_coverage),
        );
    }
    out
}

pub fn funnel_csv(rows: &[FunnelRow]) -> String {
    let mut out = String::new();
    out.push_str(FUNNEL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            if r.calibrated { "cal" } else { "uncal" },
            fmt_f64(r.bias),
            fmt_f64(r.se),
            u8::from(r.significant),
        );
    }
    out
}

pub fn manifest_json(manifest: &RunManifest) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes")
}

/// Write manifest.json into `dir` (created if needed).
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), manifest_json(manifest))
}

/// Write summary.csv, iterations.csv, funnel.csv, and manifest.json.
pub fn write_outputs(
    dir: &Path,
    config: &ScenarioConfig,
    summary: &ScenarioSummary,
    records: &[IterationRecord],
    rows: &[FunnelRow],
    manifest: &RunManifest,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), summary_csv(config, summary))?;
    fs::write(dir.join("iterations.csv"), iterations_csv(records))?;
    fs::write(dir.join("funnel.csv"), funnel_csv(rows))?;
    write_manifest(dir, manifest)
}
