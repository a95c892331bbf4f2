//! `empcal` command line: run one bias-scenario experiment and persist
//! summary.csv, iterations.csv, funnel.csv, and manifest.json.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use empcal_core::output::{write_manifest, write_outputs};
use empcal_core::{
    build_funnel_rows, run_scenario, ErrorModelChoice, RunError, Scenario, ScenarioConfig,
    Suitability,
};

#[derive(Parser)]
#[command(name = "empcal", version, about = "Empirical calibration simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run a scenario and write outputs to a directory.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Reference,
    UnmeasuredConfounder,
    Quadratic,
    Interaction,
    NonPositivity,
    MeasurementError,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Reference => Scenario::Reference,
            ScenarioArg::UnmeasuredConfounder => Scenario::UnmeasuredConfounder,
            ScenarioArg::Quadratic => Scenario::QuadraticTerm,
            ScenarioArg::Interaction => Scenario::InteractionTerm,
            ScenarioArg::NonPositivity => Scenario::NonPositivity,
            ScenarioArg::MeasurementError => Scenario::MeasurementError,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuitabilityArg {
    Ideal,
    Random,
    Unsuitable,
}

impl From<SuitabilityArg> for Suitability {
    fn from(s: SuitabilityArg) -> Self {
        match s {
            SuitabilityArg::Ideal => Suitability::IdealSuitable,
            SuitabilityArg::Random => Suitability::RandomSuitable,
            SuitabilityArg::Unsuitable => Suitability::Unsuitable,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ErrorModelArg {
    Full,
    Null,
}

impl From<ErrorModelArg> for ErrorModelChoice {
    fn from(e: ErrorModelArg) -> Self {
        match e {
            ErrorModelArg::Full => ErrorModelChoice::Full,
            ErrorModelArg::Null => ErrorModelChoice::Null,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    suitability: Option<SuitabilityArg>,
    /// Subjects per iteration.
    #[arg(long)]
    subjects: Option<usize>,
    /// Simulation iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Measured confounders.
    #[arg(long)]
    confounders: Option<usize>,
    /// Negative control outcomes.
    #[arg(long)]
    negative_controls: Option<usize>,
    #[arg(long, value_enum)]
    error_model: Option<ErrorModelArg>,
    /// Comma-separated positive-control target log odds ratios,
    /// e.g. "0.405,0.693,1.386".
    #[arg(long)]
    targets: Option<String>,
    /// Comma-separated propensity cutoffs "lower,upper".
    #[arg(long)]
    positivity_cutoffs: Option<String>,
    /// Coefficient range "low,high" in log-odds units.
    #[arg(long)]
    coef_range: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for manifest.json, summary.csv, iterations.csv,
    /// funnel.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Cap stabilized weights at this sample quantile, e.g. 0.99.
    #[arg(long)]
    weight_truncation: Option<f64>,
}

fn parse_pair(raw: &str, what: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        anyhow::bail!("{what} must be two comma-separated numbers, got '{raw}'");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}

fn parse_list(raw: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| anyhow::anyhow!("{what}: bad number '{s}': {e}"))
        })
        .collect()
}

/// Merge defaults <- config file <- command-line flags into a validated
/// config.
fn parse_config(args: &RunArgs) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            toml::from_str::<ScenarioConfig>(&raw)
                .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.scenario {
        cfg.scenario = s.into();
    }
    if let Some(s) = args.suitability {
        cfg.suitability = s.into();
    }
    if let Some(n) = args.subjects {
        cfg.n_subjects = n;
    }
    if let Some(k) = args.iterations {
        cfg.n_iterations = k;
    }
    if let Some(m) = args.confounders {
        cfg.n_confounders = m;
    }
    if let Some(s) = args.negative_controls {
        cfg.n_negative_controls = s;
    }
    if let Some(e) = args.error_model {
        cfg.error_model = e.into();
    }
    if let Some(t) = &args.targets {
        cfg.positive_control_targets = parse_list(t, "targets")?;
    }
    if let Some(p) = &args.positivity_cutoffs {
        cfg.positivity_cutoffs = parse_pair(p, "positivity-cutoffs")?;
    }
    if let Some(r) = &args.coef_range {
        let (lo, hi) = parse_pair(r, "coef-range")?;
        cfg.coef_low = lo;
        cfg.coef_high = hi;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.weight_truncation.is_some() {
        cfg.weight_truncation = args.weight_truncation;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> ExitCode {
    let cfg = match parse_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = args.threads {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }

    match run_scenario(&cfg) {
        Ok(run) => {
            let rows = match build_funnel_rows(&run.records) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = write_outputs(
                &args.out,
                &cfg,
                &run.summary,
                &run.records,
                &rows,
                &run.manifest,
            ) {
                eprintln!("error writing outputs to {}: {e}", args.out.display());
                return ExitCode::from(1);
            }
            println!(
                "{} {} {}: coverage uncal {:.3} cal {:.3}, width uncal {:.3} cal {:.3}, \
                 failed {}/{}",
                cfg.scenario.as_str(),
                cfg.suitability.as_str(),
                cfg.error_model.as_str(),
                run.summary.coverage_uncal,
                run.summary.coverage_cal,
                run.summary.mean_ci_width_uncal,
                run.summary.mean_ci_width_cal,
                run.summary.n_failed,
                cfg.n_iterations,
            );
            ExitCode::SUCCESS
        }
        Err(RunError::InvalidConfig(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(RunError::ExcessiveFailures { manifest }) => {
            if let Err(e) = write_manifest(&args.out, &manifest) {
                eprintln!("error writing manifest: {e}");
            }
            eprintln!(
                "error: {} of {} iterations failed; partial manifest written to {}",
                manifest.failures.len(),
                manifest.config.n_iterations,
                args.out.display()
            );
            ExitCode::from(3)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Commands::Run(args) => run(args),
    }
}
