//! Reproducible experiment drivers: instance generation, hindsight
//! benchmarks, the head-to-head comparison study, the horizon sweep, and
//! artifact emission (CSV traces, JSON summaries, SVG plots).
//!
//! Everything downstream of one `ExperimentConfig` is a pure function of that
//! config: instances derive from `(seed, repetition)`, the bank from the seed
//! alone, and the per-run perturbation from the repetition seed on its own
//! stream. Wall-clock fields are the only nondeterministic outputs and are
//! excluded from the determinism contract.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch_ftpl::{self, derive_batch_size, derive_eta, BatchFtplParams};
use crate::costs::{
    quadratic_gradient_scale, CostSequence, QuadraticCost, SignMode, StageCost,
};
use crate::dac::{self, DacParams};
use crate::error::{OncError, Result};
use crate::lti::LtiSystem;
use crate::oracle::{approx_min, OracleConfig};
use crate::seeding::{derive_seed, rng, Stream};
use crate::stability::{generate_bank, ControllerBank};
use crate::steady_state::{target_sup_bound, InputBall, SteadyStateTarget};
use crate::trace::RunTrace;
use crate::CostAccumulator;

/// Named plant preset: the three-state, two-input system used by the
/// comparison study.
pub const PRESET_NAME: &str = "paper-sec5";

/// Plant selection: a named preset or explicit matrices (row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemSpec {
    Preset(String),
    Explicit { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<LtiSystem> {
        match self {
            SystemSpec::Preset(name) if name == PRESET_NAME => {
                Ok(LtiSystem::benchmark_three_state())
            }
            SystemSpec::Preset(name) => Err(OncError::Config(format!(
                "unknown system preset {name:?}; the only named preset is {PRESET_NAME:?}"
            ))),
            SystemSpec::Explicit { a, b } => {
                let a = rows_to_matrix(a, "system matrix a")?;
                let b = rows_to_matrix(b, "system matrix b")?;
                LtiSystem::new(a, b)
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(OncError::Config(format!("{context} must be non-empty")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(OncError::Config(format!("{context} rows have ragged lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Stage-cost family: `Q_t = D^T D + ridge * I` with `D` entries uniform on
/// `[-q_half_width, q_half_width]`, centers uniform on
/// `[-center_half_width, center_half_width]` per coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CostFamily {
    pub q_half_width: f64,
    pub ridge: f64,
    pub center_half_width: f64,
}

impl Default for CostFamily {
    fn default() -> Self {
        Self { q_half_width: 1.0, ridge: 0.1, center_half_width: 5.0 }
    }
}

/// Disturbance process for the run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceSpec {
    Zero,
    /// Entries i.i.d. uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
}

/// Controller-bank generation parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct BankSpec {
    pub count: usize,
    pub target_gamma: f64,
    pub kappa_cap: f64,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self { count: 100, target_gamma: 0.1, kappa_cap: 50.0 }
    }
}

/// Optional overrides for the batched learner; `None` means "derive from
/// theory": `H` from the bank envelope, the gradient bound from the cost
/// family over the state envelope, `eta` from the regret balance, and
/// `epsilon = 1/T`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BatchFtplOverrides {
    pub batch_size: Option<usize>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub gradient_bound: Option<f64>,
}

/// Baseline hyperparameters; `learning_rate = None` uses `1/sqrt(T)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DacOverrides {
    pub memory: usize,
    pub truncation: usize,
    pub learning_rate: Option<f64>,
    pub coefficient_bound: f64,
}

impl Default for DacOverrides {
    fn default() -> Self {
        Self { memory: 5, truncation: 10, learning_rate: None, coefficient_bound: 10.0 }
    }
}

/// One fully reproducible experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub horizon: usize,
    pub seed: u64,
    pub repetitions: usize,
    pub costs: CostFamily,
    pub disturbance: DisturbanceSpec,
    pub bank: BankSpec,
    pub ball_radius: f64,
    /// Run the batched learner on the disturbance-free component behind a
    /// fixed auxiliary gain (required for its guarantees under disturbances;
    /// a no-op when disturbances are zero).
    pub disturbance_mode: bool,
    /// Initial state; `None` means the origin.
    pub x1: Option<Vec<f64>>,
    pub sign_mode: SignMode,
    pub batch_ftpl: BatchFtplOverrides,
    pub dac: DacOverrides,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::Preset(PRESET_NAME.to_string()),
            horizon: 500,
            seed: 42,
            repetitions: 20,
            costs: CostFamily::default(),
            disturbance: DisturbanceSpec::Uniform { half_width: 0.5 },
            bank: BankSpec::default(),
            ball_radius: 10.0,
            disturbance_mode: true,
            x1: None,
            sign_mode: SignMode::Literal,
            batch_ftpl: BatchFtplOverrides::default(),
            dac: DacOverrides::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(OncError::Config("horizon must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(OncError::Config("repetitions must be positive".into()));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return Err(OncError::Config(format!(
                "ball radius must be a finite positive value, got {}",
                self.ball_radius
            )));
        }
        if !(self.costs.q_half_width > 0.0
            && self.costs.ridge > 0.0
            && self.costs.center_half_width >= 0.0)
        {
            return Err(OncError::Config(
                "cost family widths must be positive (center width may be zero)".into(),
            ));
        }
        if let DisturbanceSpec::Uniform { half_width } = self.disturbance {
            if !(half_width > 0.0 && half_width.is_finite()) {
                return Err(OncError::Config(format!(
                    "disturbance half width must be a finite positive value, got {half_width}"
                )));
            }
        }
        self.system.resolve().map(|_| ())
    }

    /// Hex SHA-256 of the canonical JSON serialization; printed by every run
    /// so artifacts can be traced to an exact configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }

    fn initial_state(&self, system: &LtiSystem) -> Result<DVector<f64>> {
        match &self.x1 {
            None => Ok(DVector::zeros(system.state_dim())),
            Some(values) => {
                if values.len() != system.state_dim() {
                    return Err(OncError::Dimension {
                        context: "initial state",
                        expected: system.state_dim().to_string(),
                        actual: values.len().to_string(),
                    });
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

/// Comparison-study defaults: the named plant, T=500, 20 repetitions, a bank
/// of 100 gains, uniform disturbances.
///
/// The envelope-based gradient bound makes the perturbation scale 1/eta
/// dwarf the total gradient mass at T=500, parking the learner on a ball
/// corner for the whole run. The preset therefore fixes the bound to a
/// small recorded constant and asks the bank for an aggressive contraction
/// rate (the named plant is easy to stabilize), which keeps batches short
/// and the perturbation proportionate. The input ball is kept tight so the
/// mandatory corner visit in batch 1 stays cheap.
pub fn comparison_config() -> ExperimentConfig {
    ExperimentConfig {
        ball_radius: 1.0,
        bank: BankSpec {
            count: 100,
            target_gamma: 0.6,
            kappa_cap: 50.0,
        },
        batch_ftpl: BatchFtplOverrides {
            gradient_bound: Some(0.01),
            ..BatchFtplOverrides::default()
        },
        ..ExperimentConfig::default()
    }
}

/// Horizon-sweep defaults: zero disturbances and fully derived parameters so
/// the regret guarantee applies as stated.
///
/// The plant is a well-damped scalar system so the bank certifies at a high
/// contraction rate with unit conditioning; that keeps the bracket inside
/// the rate derivation small enough for the square-root regime to show at
/// horizons in the hundreds. The gradient bound is fixed at the unit scale
/// and recorded in the output.
pub fn sweep_config() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemSpec::Explicit {
            a: vec![vec![0.5]],
            b: vec![vec![1.0]],
        },
        disturbance: DisturbanceSpec::Zero,
        disturbance_mode: false,
        bank: BankSpec {
            count: 3,
            target_gamma: 0.9,
            kappa_cap: 50.0,
        },
        batch_ftpl: BatchFtplOverrides {
            gradient_bound: Some(1.0),
            ..BatchFtplOverrides::default()
        },
        ..ExperimentConfig::default()
    }
}

/// Horizons the sweep covers by default.
pub const SWEEP_HORIZONS: [usize; 4] = [200, 400, 800, 1600];

/// Deterministic instance for `(config.seed, repetition)`: stage costs and
/// disturbances on the instance stream.
pub fn generate_instance(
    config: &ExperimentConfig,
    system: &LtiSystem,
    domain_radius: f64,
    repetition: usize,
) -> Result<(CostSequence, Vec<DVector<f64>>)> {
    let n = system.state_dim();
    let mut generator = rng(derive_seed(config.seed, repetition as u64), Stream::Instance);
    let mut stages = Vec::with_capacity(config.horizon);
    let qw = config.costs.q_half_width;
    let cw = config.costs.center_half_width;
    for _ in 0..config.horizon {
        let d = DMatrix::from_fn(n, n, |_, _| generator.gen_range(-qw..=qw));
        let weight = d.transpose() * &d + DMatrix::identity(n, n) * config.costs.ridge;
        let center = DVector::from_fn(n, |_, _| generator.gen_range(-cw..=cw));
        stages.push(StageCost::Quadratic(QuadraticCost::new(weight, center)?));
    }
    let disturbances = match config.disturbance {
        DisturbanceSpec::Zero => vec![DVector::zeros(n); config.horizon],
        DisturbanceSpec::Uniform { half_width } => (0..config.horizon)
            .map(|_| DVector::from_fn(n, |_, _| generator.gen_range(-half_width..=half_width)))
            .collect(),
    };
    let scale = quadratic_gradient_scale(&stages, domain_radius)?;
    let costs = CostSequence::new(stages, scale, domain_radius)?;
    Ok((costs, disturbances))
}

/// A priori bound on the state norm of the batched learner's disturbance-free
/// loop: the settling recursion contracts by at least 1/2 per batch toward a
/// ball of radius twice the target bound, giving
/// `kappa ||x1|| + (5 kappa + 1) * sqrt(N) * (kappa / gamma) ||B|| U`.
pub fn state_envelope(
    system: &LtiSystem,
    bank: &ControllerBank,
    ball: &InputBall,
    x1: &DVector<f64>,
) -> f64 {
    let kappa = bank.bank_kappa();
    let target_bound =
        (system.state_dim() as f64).sqrt() * target_sup_bound(system, bank.anchor(), ball);
    kappa * x1.norm() + (5.0 * kappa + 1.0) * target_bound
}

/// Best fixed steady-state target in hindsight: an oracle call on the summed
/// cost sequence at accuracy `epsilon_bench`. In disturbance mode pass the
/// disturbance-driven components so the stages are recentred into nominal
/// coordinates first.
pub fn compute_benchmark(
    costs: &CostSequence,
    system: &LtiSystem,
    bank: &ControllerBank,
    ball: &InputBall,
    epsilon_bench: f64,
    shifts: Option<&[DVector<f64>]>,
) -> Result<(f64, SteadyStateTarget)> {
    if let Some(shifts) = shifts {
        if shifts.len() < costs.horizon() {
            return Err(OncError::Usage(format!(
                "{} shifts for {} stages",
                shifts.len(),
                costs.horizon()
            )));
        }
    }
    let mut total = CostAccumulator::new(costs.dim());
    total.set_linear(DVector::zeros(costs.dim()));
    for t in 1..=costs.horizon() {
        match shifts {
            None => total.push(costs.stage(t)),
            Some(shifts) => total.push(&costs.stage(t).translate(&shifts[t - 1])),
        }
    }
    let oracle_config = OracleConfig::for_epsilon(epsilon_bench, ball)?;
    let result = approx_min(&total, system, bank, ball, &oracle_config, None)?;
    Ok((result.value, result.target))
}

/// Benchmark accuracy `1e-6 * T`: negligible against any regret of interest.
pub fn benchmark_epsilon(horizon: usize) -> f64 {
    1e-6 * horizon as f64
}

/// Disturbance-driven trajectory under the auxiliary gain: `x^d_1 = 0`,
/// `x^d_{t+1} = (A - B K0) x^d_t + w_t`. Shared by every controller in a
/// repetition, so benchmarks in nominal coordinates are controller-agnostic.
pub fn disturbance_component(
    system: &LtiSystem,
    anchor_gain: &DMatrix<f64>,
    disturbances: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let closed = system.a() - system.b() * anchor_gain;
    let mut trajectory = Vec::with_capacity(disturbances.len() + 1);
    let mut x = DVector::zeros(system.state_dim());
    for w in disturbances {
        trajectory.push(x.clone());
        x = &closed * &x + w;
    }
    trajectory.push(x);
    trajectory
}

/// One algorithm's outcome on one repetition.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: &'static str,
    pub repetition: usize,
    pub benchmark_value: f64,
    pub regret: f64,
    pub trace: RunTrace,
}

impl RunResult {
    fn new(
        algorithm: &'static str,
        repetition: usize,
        benchmark_value: f64,
        trace: RunTrace,
    ) -> Self {
        let regret = trace.total_cost() - benchmark_value;
        Self { algorithm, repetition, benchmark_value, regret, trace }
    }

    pub fn total_cost(&self) -> f64 {
        self.trace.total_cost()
    }
}

/// Both controllers on one shared instance.
#[derive(Debug, Clone)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub instance_hash: String,
    pub batch_ftpl: RunResult,
    pub dac: RunResult,
}

/// Comparison study over all repetitions.
#[derive(Debug, Clone)]
pub struct ComparisonOutcome {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub bank_gamma: f64,
    pub bank_kappa: f64,
    pub resolved: ResolvedParameters,
    pub repetitions: Vec<RepetitionOutcome>,
    /// `(repetition, error)` for repetitions that failed; the rest proceed.
    pub failures: Vec<(usize, String)>,
}

/// Derived algorithm parameters recorded for interpretability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResolvedParameters {
    pub batch_size: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub gradient_bound: f64,
    pub state_envelope: f64,
    pub dac_learning_rate: f64,
}

fn hash_instance(costs: &CostSequence, disturbances: &[DVector<f64>]) -> String {
    let mut hasher = Sha256::new();
    for stage in costs.stages() {
        if let StageCost::Quadratic(q) = stage {
            for v in q.weight().iter() {
                hasher.update(v.to_le_bytes());
            }
            for v in q.center().iter() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    for w in disturbances {
        for v in w.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

/// Resolves every derived parameter for a given bank and a representative
/// instance scale.
fn resolve_parameters(
    config: &ExperimentConfig,
    system: &LtiSystem,
    bank: &ControllerBank,
    ball: &InputBall,
    x1: &DVector<f64>,
    sample_costs: &CostSequence,
) -> Result<ResolvedParameters> {
    let envelope = state_envelope(system, bank, ball, x1);
    let gradient_bound = match config.batch_ftpl.gradient_bound {
        Some(value) => value,
        None => quadratic_gradient_scale(sample_costs.stages(), envelope)?,
    };
    let batch_size = match config.batch_ftpl.batch_size {
        Some(value) => value,
        None => derive_batch_size(bank.bank_gamma(), bank.bank_kappa())?,
    };
    let eta = match config.batch_ftpl.eta {
        Some(value) => value,
        None => derive_eta(
            gradient_bound,
            system.state_dim(),
            config.horizon,
            bank.bank_gamma(),
            bank.bank_kappa(),
        )?,
    };
    let epsilon = config
        .batch_ftpl
        .epsilon
        .unwrap_or(1.0 / config.horizon as f64);
    let dac_learning_rate = config
        .dac
        .learning_rate
        .unwrap_or_else(|| DacParams::default_learning_rate(config.horizon));
    Ok(ResolvedParameters {
        batch_size,
        eta,
        epsilon,
        gradient_bound,
        state_envelope: envelope,
        dac_learning_rate,
    })
}

/// Runs both controllers on paired instances across all repetitions.
///
/// Failures in one repetition are recorded and do not abort the others;
/// systematic failures (bank generation, invalid config) abort immediately.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ComparisonOutcome> {
    config.validate()?;
    let system = config.system.resolve()?;
    let bank = generate_bank(
        &system,
        config.bank.count,
        config.bank.target_gamma,
        config.bank.kappa_cap,
        config.seed,
    )?;
    let ball = InputBall::new(config.ball_radius)?;
    let x1 = config.initial_state(&system)?;
    let config_hash = config.hash()?;

    let envelope = state_envelope(&system, &bank, &ball, &x1);
    let (sample_costs, _) = generate_instance(config, &system, envelope, 0)?;
    let resolved = resolve_parameters(config, &system, &bank, &ball, &x1, &sample_costs)?;

    let mut repetitions = Vec::new();
    let mut failures = Vec::new();
    for repetition in 0..config.repetitions {
        match run_repetition(config, &system, &bank, &ball, &x1, &resolved, repetition) {
            Ok(outcome) => repetitions.push(outcome),
            Err(err) => failures.push((repetition, err.to_string())),
        }
    }
    if repetitions.is_empty() {
        if let Some((repetition, message)) = failures.first() {
            return Err(OncError::Numerical(format!(
                "every repetition failed; first failure (repetition {repetition}): {message}"
            )));
        }
    }
    Ok(ComparisonOutcome {
        config: config.clone(),
        config_hash,
        bank_gamma: bank.bank_gamma(),
        bank_kappa: bank.bank_kappa(),
        resolved,
        repetitions,
        failures,
    })
}

fn run_repetition(
    config: &ExperimentConfig,
    system: &LtiSystem,
    bank: &ControllerBank,
    ball: &InputBall,
    x1: &DVector<f64>,
    resolved: &ResolvedParameters,
    repetition: usize,
) -> Result<RepetitionOutcome> {
    let (costs, disturbances) =
        generate_instance(config, system, resolved.state_envelope, repetition)?;
    let instance_hash = hash_instance(&costs, &disturbances);
    let anchor = bank.anchor().clone();

    let params = BatchFtplParams {
        horizon: config.horizon,
        batch_size: resolved.batch_size,
        eta: resolved.eta,
        epsilon: resolved.epsilon,
        rng_seed: derive_seed(config.seed, repetition as u64),
        sign_mode: config.sign_mode,
        disturbance_mode: config.disturbance_mode,
        anchor: config.disturbance_mode.then(|| anchor.clone()),
        sigma_override: None,
    };
    let ftpl_trace = batch_ftpl::run(params, system, bank, ball, &costs, &disturbances, x1)?;

    let dac_params = DacParams {
        horizon: config.horizon,
        memory: config.dac.memory,
        truncation: config.dac.truncation,
        learning_rate: resolved.dac_learning_rate,
        coefficient_bound: config.dac.coefficient_bound,
        anchor: anchor.clone(),
    };
    let dac_trace = dac::run(dac_params, system, &costs, &disturbances, x1)?;

    // Benchmark in nominal coordinates: recentre stages around the shared
    // disturbance-driven component when the split is in force.
    let shifts = config
        .disturbance_mode
        .then(|| disturbance_component(system, anchor.gain(), &disturbances));
    let (benchmark_value, _) = compute_benchmark(
        &costs,
        system,
        bank,
        ball,
        benchmark_epsilon(config.horizon),
        shifts.as_deref(),
    )?;

    Ok(RepetitionOutcome {
        repetition,
        instance_hash,
        batch_ftpl: RunResult::new("batch_ftpl", repetition, benchmark_value, ftpl_trace),
        dac: RunResult::new("dac", repetition, benchmark_value, dac_trace),
    })
}

/// Mean and standard deviation (population) per position across equal-length
/// series.
pub fn mean_std_curves(series: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    if series.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = series[0].len();
    let count = series.len() as f64;
    let mut mean = vec![0.0; len];
    for s in series {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut std = vec![0.0; len];
    for s in series {
        for (d, (v, m)) in std.iter_mut().zip(s.iter().zip(&mean)) {
            *d += (v - m) * (v - m);
        }
    }
    for d in &mut std {
        *d = (*d / count).sqrt();
    }
    (mean, std)
}

/// One horizon of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub horizon: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_total_cost: f64,
    pub mean_benchmark: f64,
    pub repetitions: usize,
}

/// Sweep results plus the fitted growth exponent.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log(mean regret)` against `log T`.
    pub slope: f64,
    pub failures: Vec<(usize, usize, String)>,
}

/// Runs the batched learner across horizons with fully derived parameters and
/// fits the regret growth exponent.
pub fn run_sweep(config: &ExperimentConfig, horizons: &[usize]) -> Result<SweepOutcome> {
    if horizons.is_empty() {
        return Err(OncError::Config("sweep needs at least one horizon".into()));
    }
    let mut points = Vec::with_capacity(horizons.len());
    let mut failures = Vec::new();
    for &horizon in horizons {
        let point_config = ExperimentConfig { horizon, ..config.clone() };
        let outcome = run_comparison_single(&point_config, &mut failures)?;
        points.push(outcome);
    }
    let slope = regret_slope(&points);
    Ok(SweepOutcome {
        config: config.clone(),
        config_hash: config.hash()?,
        points,
        slope,
        failures,
    })
}

/// One sweep point: batched learner only (the sweep studies its guarantee).
fn run_comparison_single(
    config: &ExperimentConfig,
    failures: &mut Vec<(usize, usize, String)>,
) -> Result<SweepPoint> {
    config.validate()?;
    let system = config.system.resolve()?;
    let bank = generate_bank(
        &system,
        config.bank.count,
        config.bank.target_gamma,
        config.bank.kappa_cap,
        config.seed,
    )?;
    let ball = InputBall::new(config.ball_radius)?;
    let x1 = config.initial_state(&system)?;
    let envelope = state_envelope(&system, &bank, &ball, &x1);
    let (sample_costs, _) = generate_instance(config, &system, envelope, 0)?;
    let resolved = resolve_parameters(config, &system, &bank, &ball, &x1, &sample_costs)?;

    let mut regrets = Vec::new();
    let mut totals = Vec::new();
    let mut benchmarks = Vec::new();
    for repetition in 0..config.repetitions {
        let run_once = || -> Result<(f64, f64)> {
            let (costs, disturbances) =
                generate_instance(config, &system, resolved.state_envelope, repetition)?;
            let params = BatchFtplParams {
                horizon: config.horizon,
                batch_size: resolved.batch_size,
                eta: resolved.eta,
                epsilon: resolved.epsilon,
                rng_seed: derive_seed(config.seed, repetition as u64),
                sign_mode: config.sign_mode,
                disturbance_mode: config.disturbance_mode,
                anchor: config.disturbance_mode.then(|| bank.anchor().clone()),
                sigma_override: None,
            };
            let trace =
                batch_ftpl::run(params, &system, &bank, &ball, &costs, &disturbances, &x1)?;
            let shifts = config
                .disturbance_mode
                .then(|| disturbance_component(&system, bank.anchor().gain(), &disturbances));
            let (benchmark_value, _) = compute_benchmark(
                &costs,
                &system,
                &bank,
                &ball,
                benchmark_epsilon(config.horizon),
                shifts.as_deref(),
            )?;
            Ok((trace.total_cost(), benchmark_value))
        };
        match run_once() {
            Ok((total, benchmark)) => {
                regrets.push(total - benchmark);
                totals.push(total);
                benchmarks.push(benchmark);
            }
            Err(err) => failures.push((config.horizon, repetition, err.to_string())),
        }
    }
    if regrets.is_empty() {
        return Err(OncError::Numerical(format!(
            "all repetitions failed at horizon {}",
            config.horizon
        )));
    }
    let count = regrets.len() as f64;
    let mean_regret = regrets.iter().sum::<f64>() / count;
    let std_regret = (regrets.iter().map(|r| (r - mean_regret).powi(2)).sum::<f64>() / count).sqrt();
    Ok(SweepPoint {
        horizon: config.horizon,
        batch_size: resolved.batch_size,
        eta: resolved.eta,
        epsilon: resolved.epsilon,
        mean_regret,
        std_regret,
        mean_total_cost: totals.iter().sum::<f64>() / count,
        mean_benchmark: benchmarks.iter().sum::<f64>() / count,
        repetitions: regrets.len(),
    })
}

/// Least-squares slope of `log(mean regret)` vs `log horizon`. Regrets are
/// floored at a tiny positive value: a near-zero (or slightly negative, up to
/// oracle slack) mean regret only strengthens a sublinearity claim.
pub fn regret_slope(points: &[SweepPoint]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p.horizon as f64).ln(), p.mean_regret.max(1e-9).ln()))
        .collect();
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

/// Renders a trace as CSV with columns
/// `t,x_1..x_N,u_1..u_M,stage_cost,cumulative,batch_index`.
///
/// Floats use the shortest round-trip decimal form, so identical runs yield
/// byte-identical files.
pub fn trace_csv(trace: &RunTrace) -> String {
    let n = trace.states[0].len();
    let m = trace.inputs[0].len();
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    for i in 1..=m {
        out.push_str(&format!(",u_{i}"));
    }
    out.push_str(",stage_cost,cumulative,batch_index\n");
    for t in 0..trace.horizon() {
        out.push_str(&format!("{}", t + 1));
        for v in trace.states[t].iter() {
            out.push_str(&format!(",{v}"));
        }
        for v in trace.inputs[t].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            trace.stage_costs[t], trace.cumulative[t], trace.update_index[t]
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct AlgorithmSummary {
    algorithm: String,
    mean_cumulative: Vec<f64>,
    std_cumulative: Vec<f64>,
    mean_total_cost: f64,
    mean_regret: f64,
    mean_total_seconds: f64,
    mean_update_seconds: f64,
    updates_per_run: f64,
}

fn summarize_algorithm(name: &str, results: &[&RunResult]) -> AlgorithmSummary {
    let series: Vec<&[f64]> = results.iter().map(|r| r.trace.cumulative.as_slice()).collect();
    let (mean_cumulative, std_cumulative) = mean_std_curves(&series);
    let count = results.len().max(1) as f64;
    let mean_total_cost = results.iter().map(|r| r.total_cost()).sum::<f64>() / count;
    let mean_regret = results.iter().map(|r| r.regret).sum::<f64>() / count;
    let mean_total_seconds = results.iter().map(|r| r.trace.total_seconds).sum::<f64>() / count;
    let update_counts: usize = results.iter().map(|r| r.trace.update_seconds.len()).sum();
    let update_total: f64 = results
        .iter()
        .map(|r| r.trace.update_seconds.iter().sum::<f64>())
        .sum();
    AlgorithmSummary {
        algorithm: name.to_string(),
        mean_cumulative,
        std_cumulative,
        mean_total_cost,
        mean_regret,
        mean_total_seconds,
        mean_update_seconds: update_total / update_counts.max(1) as f64,
        updates_per_run: update_counts as f64 / count,
    }
}

#[derive(Debug, Serialize)]
struct ComparisonSummary {
    config_hash: String,
    config: ExperimentConfig,
    bank_gamma: f64,
    bank_kappa: f64,
    resolved: ResolvedParameters,
    repetitions_completed: usize,
    instance_hashes: Vec<String>,
    benchmark_values: Vec<f64>,
    algorithms: Vec<AlgorithmSummary>,
    failures: Vec<(usize, String)>,
}

/// Writes trace CSVs, the aggregate JSON summary, and plots for a comparison
/// study. Returns the paths written.
pub fn emit_comparison(outcome: &ComparisonOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let traces_dir = dir.join("traces");
    let plots_dir = dir.join("plots");
    fs::create_dir_all(&traces_dir)?;
    fs::create_dir_all(&plots_dir)?;
    let mut written = Vec::new();

    for rep in &outcome.repetitions {
        for result in [&rep.batch_ftpl, &rep.dac] {
            let path = traces_dir.join(format!(
                "{}-rep{:03}.csv",
                result.algorithm, rep.repetition
            ));
            fs::write(&path, trace_csv(&result.trace))?;
            written.push(path);
        }
    }

    let ftpl: Vec<&RunResult> = outcome.repetitions.iter().map(|r| &r.batch_ftpl).collect();
    let dac: Vec<&RunResult> = outcome.repetitions.iter().map(|r| &r.dac).collect();
    let summary = ComparisonSummary {
        config_hash: outcome.config_hash.clone(),
        config: outcome.config.clone(),
        bank_gamma: outcome.bank_gamma,
        bank_kappa: outcome.bank_kappa,
        resolved: outcome.resolved,
        repetitions_completed: outcome.repetitions.len(),
        instance_hashes: outcome.repetitions.iter().map(|r| r.instance_hash.clone()).collect(),
        benchmark_values: outcome
            .repetitions
            .iter()
            .map(|r| r.batch_ftpl.benchmark_value)
            .collect(),
        algorithms: vec![
            summarize_algorithm("batch_ftpl", &ftpl),
            summarize_algorithm("dac", &dac),
        ],
        failures: outcome.failures.clone(),
    };
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    written.push(summary_path);

    written.extend(emit_cumulative_band(&summary, &plots_dir)?);
    written.extend(emit_runtime_bars(&summary, &plots_dir)?);
    Ok(written)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    config_hash: String,
    config: ExperimentConfig,
    points: Vec<SweepPoint>,
    slope: f64,
    failures: Vec<(usize, usize, String)>,
}

/// Writes the sweep JSON summary and the regret-growth plot.
pub fn emit_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir)?;
    let mut written = Vec::new();
    let summary = SweepSummary {
        config_hash: outcome.config_hash.clone(),
        config: outcome.config.clone(),
        points: outcome.points.clone(),
        slope: outcome.slope,
        failures: outcome.failures.clone(),
    };
    let summary_path = dir.join("sweep.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    written.push(summary_path);
    written.extend(emit_regret_curve(outcome, &plots_dir)?);
    Ok(written)
}

// --- SVG rendering -----------------------------------------------------

struct Frame {
    width: f64,
    height: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Self {
            width: 720.0,
            height: 460.0,
            left: 70.0,
            right: 20.0,
            top: 40.0,
            bottom: 50.0,
            x_range: pad_range(x_range),
            y_range: pad_range(y_range),
        }
    }

    fn x(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.left + (v - lo) / (hi - lo) * (self.width - self.left - self.right)
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.height - self.bottom - (v - lo) / (hi - lo) * (self.height - self.top - self.bottom)
    }

    fn open(&self, title: &str) -> String {
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
                "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
                "<text x=\"{tx}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n"
            ),
            w = self.width,
            h = self.height,
            tx = self.width / 2.0,
            title = title
        )
    }

    fn axes(&self, x_label: &str, y_label: &str) -> String {
        let mut s = format!(
            "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
             <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
            l = self.left,
            r = self.width - self.right,
            t = self.top,
            b = self.height - self.bottom,
        );
        for i in 0..=4 {
            let fx = self.x_range.0 + (self.x_range.1 - self.x_range.0) * i as f64 / 4.0;
            let fy = self.y_range.0 + (self.y_range.1 - self.y_range.0) * i as f64 / 4.0;
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                self.x(fx),
                self.height - self.bottom + 18.0,
                tick_label(fx)
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                self.left - 6.0,
                self.y(fy) + 4.0,
                tick_label(fy)
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            (self.left + self.width - self.right) / 2.0,
            self.height - 12.0,
            x_label
        ));
        s.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            (self.top + self.height - self.bottom) / 2.0,
            (self.top + self.height - self.bottom) / 2.0,
            y_label
        ));
        s
    }

    fn polyline(&self, points: &[(f64, f64)], color: &str, width: f64) -> String {
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.x(*x), self.y(*y)))
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>\n",
            coords.join(" "),
            color,
            width
        )
    }

    fn band(&self, xs: &[f64], lower: &[f64], upper: &[f64], color: &str) -> String {
        let mut coords = Vec::with_capacity(xs.len() * 2);
        for (x, u) in xs.iter().zip(upper) {
            coords.push(format!("{:.2},{:.2}", self.x(*x), self.y(*u)));
        }
        for (x, l) in xs.iter().zip(lower).rev() {
            coords.push(format!("{:.2},{:.2}", self.x(*x), self.y(*l)));
        }
        format!(
            "<polygon points=\"{}\" fill=\"{}\" opacity=\"0.25\" stroke=\"none\"/>\n",
            coords.join(" "),
            color
        )
    }
}

fn pad_range(range: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = range;
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

const FTPL_COLOR: &str = "#1f77b4";
const DAC_COLOR: &str = "#d62728";

fn emit_cumulative_band(summary: &ComparisonSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    let ftpl = &summary.algorithms[0];
    let dac = &summary.algorithms[1];
    let horizon = ftpl.mean_cumulative.len();
    let mut csv = String::from(
        "t,batch_ftpl_mean,batch_ftpl_std,dac_mean,dac_std\n",
    );
    for t in 0..horizon {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            t + 1,
            ftpl.mean_cumulative[t],
            ftpl.std_cumulative[t],
            dac.mean_cumulative[t],
            dac.std_cumulative[t]
        ));
    }
    let csv_path = dir.join("cumulative_band.csv");
    fs::write(&csv_path, csv)?;

    let xs: Vec<f64> = (1..=horizon).map(|t| t as f64).collect();
    let mut y_max = f64::MIN;
    let mut y_min = f64::MAX;
    for alg in [ftpl, dac] {
        for t in 0..horizon {
            y_max = y_max.max(alg.mean_cumulative[t] + alg.std_cumulative[t]);
            y_min = y_min.min(alg.mean_cumulative[t] - alg.std_cumulative[t]);
        }
    }
    let frame = Frame::new((1.0, horizon as f64), (y_min.min(0.0), y_max));
    let mut svg = frame.open("Mean cumulative cost (band: +/- 1 std)");
    svg.push_str(&frame.axes("step", "cumulative cost"));
    for (alg, color) in [(ftpl, FTPL_COLOR), (dac, DAC_COLOR)] {
        let lower: Vec<f64> = alg
            .mean_cumulative
            .iter()
            .zip(&alg.std_cumulative)
            .map(|(m, s)| m - s)
            .collect();
        let upper: Vec<f64> = alg
            .mean_cumulative
            .iter()
            .zip(&alg.std_cumulative)
            .map(|(m, s)| m + s)
            .collect();
        svg.push_str(&frame.band(&xs, &lower, &upper, color));
        let line: Vec<(f64, f64)> = xs
            .iter()
            .zip(&alg.mean_cumulative)
            .map(|(x, y)| (*x, *y))
            .collect();
        svg.push_str(&frame.polyline(&line, color, 1.8));
    }
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"52\" fill=\"{FTPL_COLOR}\">batch_ftpl</text>\n\
         <text x=\"{x}\" y=\"68\" fill=\"{DAC_COLOR}\">dac</text>\n</svg>\n",
        x = frame.left + 10.0
    ));
    let svg_path = dir.join("cumulative_band.svg");
    fs::write(&svg_path, svg)?;
    Ok(vec![csv_path, svg_path])
}

fn emit_runtime_bars(summary: &ComparisonSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from(
        "algorithm,mean_total_seconds,mean_update_seconds,updates_per_run\n",
    );
    for alg in &summary.algorithms {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            alg.algorithm, alg.mean_total_seconds, alg.mean_update_seconds, alg.updates_per_run
        ));
    }
    let csv_path = dir.join("runtime_bars.csv");
    fs::write(&csv_path, csv)?;

    let max_update = summary
        .algorithms
        .iter()
        .map(|a| a.mean_update_seconds)
        .fold(f64::MIN_POSITIVE, f64::max);
    let frame = Frame::new((0.0, 2.0), (0.0, max_update));
    let mut svg = frame.open("Mean seconds per controller update");
    svg.push_str(&frame.axes("", "seconds per update"));
    for (i, (alg, color)) in summary
        .algorithms
        .iter()
        .zip([FTPL_COLOR, DAC_COLOR])
        .enumerate()
    {
        let x0 = frame.x(i as f64 + 0.3);
        let x1 = frame.x(i as f64 + 0.7);
        let y0 = frame.y(alg.mean_update_seconds);
        let base = frame.y(0.0);
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            x0,
            y0,
            x1 - x0,
            base - y0,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            (x0 + x1) / 2.0,
            base + 18.0,
            alg.algorithm
        ));
    }
    svg.push_str("</svg>\n");
    let svg_path = dir.join("runtime_bars.svg");
    fs::write(&svg_path, svg)?;
    Ok(vec![csv_path, svg_path])
}

fn emit_regret_curve(outcome: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csv = String::from("horizon,mean_regret,std_regret,regret_over_sqrt_t\n");
    for p in &outcome.points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.horizon,
            p.mean_regret,
            p.std_regret,
            p.mean_regret / (p.horizon as f64).sqrt()
        ));
    }
    let csv_path = dir.join("regret_vs_horizon.csv");
    fs::write(&csv_path, csv)?;

    // Log-log regret curve with a sqrt(T) guide through the first point.
    let pts: Vec<(f64, f64)> = outcome
        .points
        .iter()
        .map(|p| ((p.horizon as f64).ln(), p.mean_regret.max(1e-9).ln()))
        .collect();
    let y_lo = pts.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let y_hi = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let x_lo = pts[0].0;
    let x_hi = pts.last().unwrap().0;
    let guide: Vec<(f64, f64)> = pts
        .iter()
        .map(|(x, _)| (*x, pts[0].1 + 0.5 * (x - x_lo)))
        .collect();
    let g_hi = guide.iter().map(|p| p.1).fold(y_hi, f64::max);
    let frame = Frame::new((x_lo, x_hi), (y_lo, g_hi));
    let mut svg = frame.open(&format!(
        "Regret growth (log-log), fitted slope {:.3}",
        outcome.slope
    ));
    svg.push_str(&frame.axes("ln horizon", "ln mean regret"));
    svg.push_str(&frame.polyline(&guide, "#999999", 1.0));
    svg.push_str(&frame.polyline(&pts, FTPL_COLOR, 1.8));
    for (x, y) in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{FTPL_COLOR}\"/>\n",
            frame.x(*x),
            frame.y(*y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"52\" fill=\"#999999\">slope 1/2 guide</text>\n</svg>\n",
        x = frame.left + 10.0
    ));
    let svg_path = dir.join("regret_vs_horizon.svg");
    fs::write(&svg_path, svg)?;
    Ok(vec![csv_path, svg_path])
}
