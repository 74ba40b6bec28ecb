//! Command-line front end: bank synthesis, single-algorithm runs, the
//! comparison study, the horizon sweep, and a fast self-check suite.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 numerical or
//! divergence error, 3 self-check failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use onc_core::harness::{
    self, comparison_config, sweep_config, DisturbanceSpec, ExperimentConfig, SWEEP_HORIZONS,
};
use onc_core::{generate_bank, OncError};

mod verify;

#[derive(Parser)]
#[command(
    name = "onc",
    about = "Online control of a known linear system: batched FTPL over steady-state targets vs. a disturbance-action baseline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a certified controller bank, or inspect a stored one.
    Bank(BankArgs),
    /// Run a single algorithm over the configured repetitions.
    Run(RunArgs),
    /// Paired comparison of both algorithms on shared instances.
    Compare(CompareArgs),
    /// Regret growth across horizons with derived parameters.
    Sweep(SweepArgs),
    /// Fast property self-checks (exit 3 on failure).
    Verify(verify::VerifyArgs),
}

#[derive(Args)]
struct BankArgs {
    /// Inspect an existing bank file instead of generating.
    #[arg(long)]
    inspect: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0.1)]
    target_gamma: f64,
    #[arg(long, default_value_t = 50.0)]
    kappa_cap: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Where to write the bank JSON (generation only).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    system: SystemArgs,
}

#[derive(Args, Clone)]
struct SystemArgs {
    /// JSON config file supplying the system (and defaults for other fields).
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Flag overrides mirroring the experiment config; any flag beats the file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    ball_radius: Option<f64>,
    #[arg(long)]
    bank_count: Option<usize>,
    #[arg(long)]
    target_gamma: Option<f64>,
    #[arg(long)]
    kappa_cap: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gradient_bound: Option<f64>,
    #[arg(long)]
    dac_memory: Option<usize>,
    #[arg(long)]
    dac_truncation: Option<usize>,
    #[arg(long)]
    dac_learning_rate: Option<f64>,
    #[arg(long)]
    dac_coefficient_bound: Option<f64>,
    #[arg(long, value_enum)]
    disturbance: Option<DisturbanceKind>,
    #[arg(long)]
    disturbance_half_width: Option<f64>,
    /// Learn on the disturbance-free component behind the anchor gain.
    #[arg(long)]
    disturbance_mode: Option<bool>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DisturbanceKind {
    Zero,
    Uniform,
}

impl ConfigArgs {
    fn resolve(&self, default: ExperimentConfig) -> Result<ExperimentConfig, OncError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
            None => default,
        };
        if let Some(v) = self.horizon {
            config.horizon = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.repetitions {
            config.repetitions = v;
        }
        if let Some(v) = self.ball_radius {
            config.ball_radius = v;
        }
        if let Some(v) = self.bank_count {
            config.bank.count = v;
        }
        if let Some(v) = self.target_gamma {
            config.bank.target_gamma = v;
        }
        if let Some(v) = self.kappa_cap {
            config.bank.kappa_cap = v;
        }
        if self.batch_size.is_some() {
            config.batch_ftpl.batch_size = self.batch_size;
        }
        if self.eta.is_some() {
            config.batch_ftpl.eta = self.eta;
        }
        if self.epsilon.is_some() {
            config.batch_ftpl.epsilon = self.epsilon;
        }
        if self.gradient_bound.is_some() {
            config.batch_ftpl.gradient_bound = self.gradient_bound;
        }
        if let Some(v) = self.dac_memory {
            config.dac.memory = v;
        }
        if let Some(v) = self.dac_truncation {
            config.dac.truncation = v;
        }
        if self.dac_learning_rate.is_some() {
            config.dac.learning_rate = self.dac_learning_rate;
        }
        if let Some(v) = self.dac_coefficient_bound {
            config.dac.coefficient_bound = v;
        }
        match (self.disturbance, self.disturbance_half_width) {
            (Some(DisturbanceKind::Zero), _) => config.disturbance = DisturbanceSpec::Zero,
            (Some(DisturbanceKind::Uniform), width) => {
                config.disturbance = DisturbanceSpec::Uniform {
                    half_width: width.unwrap_or(0.5),
                }
            }
            (None, Some(width)) => {
                config.disturbance = DisturbanceSpec::Uniform { half_width: width }
            }
            (None, None) => {}
        }
        if let Some(v) = self.disturbance_mode {
            config.disturbance_mode = v;
        }
        if self.output_dir.is_some() {
            config.output_dir = self.output_dir.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    algorithm: Algorithm,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    BatchFtpl,
    Dac,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated horizons, e.g. 200,400,800,1600.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[command(flatten)]
    overrides: ConfigArgs,
}

fn main() -> ExitCode {
    // Clap's default failure code is 2, which this tool reserves for
    // numerical errors; remap argument problems to the config/usage code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Bank(args) => cmd_bank(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => return verify::cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &OncError) -> u8 {
    match err {
        OncError::Config(_)
        | OncError::Usage(_)
        | OncError::Dimension { .. }
        | OncError::Io(_)
        | OncError::Json(_) => 1,
        _ => 2,
    }
}

fn output_dir(config: &ExperimentConfig, fallback: &str) -> PathBuf {
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn cmd_bank(args: BankArgs) -> Result<(), OncError> {
    let config = match &args.system.config {
        Some(path) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    let system = config.system.resolve()?;
    if let Some(path) = &args.inspect {
        let bank = onc_core::ControllerBank::from_json(&system, &fs::read_to_string(path)?)?;
        println!(
            "bank: {} gains, gamma {:.6}, kappa {:.6}, seed {}",
            bank.certificates().len(),
            bank.bank_gamma(),
            bank.bank_kappa(),
            bank.seed()
        );
        for (i, cert) in bank.certificates().iter().enumerate() {
            println!(
                "  [{i:3}] gamma {:.6} kappa {:10.4} gain_norm {:.4}",
                cert.gamma(),
                cert.kappa(),
                cert.gain().norm()
            );
        }
        return Ok(());
    }
    let bank = generate_bank(&system, args.count, args.target_gamma, args.kappa_cap, args.seed)?;
    println!(
        "generated {} gains: gamma {:.6}, kappa {:.6}",
        bank.certificates().len(),
        bank.bank_gamma(),
        bank.bank_kappa()
    );
    if let Some(path) = &args.output {
        fs::write(path, bank.to_json()?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), OncError> {
    // A single-algorithm run reuses the comparison pipeline and keeps only
    // the requested side; instances and benchmarks are identical either way.
    let config = args.overrides.resolve(comparison_config())?;
    println!("config hash {}", config.hash()?);
    let outcome = harness::run_comparison(&config)?;
    let dir = output_dir(&config, "onc-run");
    harness::emit_comparison(&outcome, &dir)?;
    let name = match args.algorithm {
        Algorithm::BatchFtpl => "batch_ftpl",
        Algorithm::Dac => "dac",
    };
    for rep in &outcome.repetitions {
        let result = match args.algorithm {
            Algorithm::BatchFtpl => &rep.batch_ftpl,
            Algorithm::Dac => &rep.dac,
        };
        println!(
            "rep {:3}: total {:14.4} benchmark {:14.4} regret {:12.4} ({:.2}s)",
            rep.repetition,
            result.total_cost(),
            result.benchmark_value,
            result.regret,
            result.trace.total_seconds
        );
    }
    report_failures(&outcome.failures);
    println!("algorithm {name}: artifacts in {}", dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), OncError> {
    let config = args.overrides.resolve(comparison_config())?;
    println!("config hash {}", config.hash()?);
    let outcome = harness::run_comparison(&config)?;
    let dir = output_dir(&config, "onc-compare");
    harness::emit_comparison(&outcome, &dir)?;
    let reps = outcome.repetitions.len() as f64;
    let mean = |f: &dyn Fn(&harness::RepetitionOutcome) -> f64| {
        outcome.repetitions.iter().map(|r| f(r)).sum::<f64>() / reps
    };
    println!(
        "bank: gamma {:.4}, kappa {:.4}; batch size {}, eta {:.6e}, epsilon {:.3e}",
        outcome.bank_gamma,
        outcome.bank_kappa,
        outcome.resolved.batch_size,
        outcome.resolved.eta,
        outcome.resolved.epsilon
    );
    println!(
        "batch_ftpl: mean total {:14.4} mean regret {:12.4}",
        mean(&|r| r.batch_ftpl.total_cost()),
        mean(&|r| r.batch_ftpl.regret)
    );
    println!(
        "dac:        mean total {:14.4} mean regret {:12.4}",
        mean(&|r| r.dac.total_cost()),
        mean(&|r| r.dac.regret)
    );
    report_failures(&outcome.failures);
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), OncError> {
    let config = args.overrides.resolve(sweep_config())?;
    println!("config hash {}", config.hash()?);
    let horizons = args.horizons.unwrap_or_else(|| SWEEP_HORIZONS.to_vec());
    let outcome = harness::run_sweep(&config, &horizons)?;
    let dir = output_dir(&config, "onc-sweep");
    harness::emit_sweep(&outcome, &dir)?;
    println!("horizon    mean_regret     std_regret   regret/sqrt(T)");
    for p in &outcome.points {
        println!(
            "{:7} {:14.4} {:14.4} {:16.4}",
            p.horizon,
            p.mean_regret,
            p.std_regret,
            p.mean_regret / (p.horizon as f64).sqrt()
        );
    }
    println!("fitted log-log slope: {:.4}", outcome.slope);
    for (horizon, repetition, message) in &outcome.failures {
        eprintln!("warning: T={horizon} repetition {repetition} failed: {message}");
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn report_failures(failures: &[(usize, String)]) {
    for (repetition, message) in failures {
        eprintln!("warning: repetition {repetition} failed: {message}");
    }
}
