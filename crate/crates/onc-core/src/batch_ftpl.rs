//! Batched follow-the-perturbed-leader over steady-state targets.
//!
//! The learner splits the horizon into batches of `H` steps. At each batch
//! boundary it asks the oracle for an approximate minimizer of the perturbed
//! history
//!
//! ```text
//!   <sigma, z> + sum_{tau <= completed steps} f_tau(z)
//! ```
//!
//! over the union of steady-state slices, then holds the affine policy
//! realizing that target for the whole batch. The perturbation `sigma` is
//! drawn once up front, so consecutive leaders rarely jump and each batch pays
//! only a geometric settling cost toward its target.

use std::time::Instant;

use nalgebra::DVector;

use crate::costs::{CostAccumulator, CostFn, CostSequence, PerturbationTerm, SignMode, StageCost};
use crate::error::{OncError, Result};
use crate::lti::{step_split, LtiSystem, SplitState, DIVERGENCE_BOUND};
use crate::oracle::{approx_min, OracleConfig, OracleResult, OracleScratch};
use crate::seeding::{rng, Stream};
use crate::stability::{ControllerBank, StabilityCertificate};
use crate::steady_state::{AffinePolicy, InputBall};
use crate::trace::{BatchRecord, RunTrace};

/// Smallest batch length whose closed-loop decay halves the envelope:
/// `kappa * (1 - gamma)^H <= 1/2`.
///
/// Seeded from `ln(2 kappa) / -ln(1 - gamma)` and refined by direct
/// inequality checks so float rounding in the logarithms cannot push the
/// result off by one in either direction.
pub fn derive_batch_size(gamma: f64, kappa: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(OncError::Config(format!(
            "decay rate must lie in (0, 1], got {gamma}"
        )));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(OncError::Config(format!(
            "overshoot must be a finite value >= 1, got {kappa}"
        )));
    }
    if gamma >= 1.0 {
        // The closed loop is nilpotent after one step.
        return Ok(1);
    }
    let base = 1.0 - gamma;
    let seed = (2.0 * kappa).ln() / -base.ln();
    if !seed.is_finite() {
        return Err(OncError::Numerical(format!(
            "batch length seed overflowed for gamma={gamma}, kappa={kappa}"
        )));
    }
    let mut h = (seed.ceil() as usize).saturating_sub(1).max(1);
    while kappa * base.powf(h as f64) > 0.5 {
        h += 1;
    }
    Ok(h)
}

/// Perturbation rate balancing the follow-the-leader stability term against
/// the batching overhead:
///
/// ```text
///   eta = 1 / (5 L sqrt(2 N T (1 - ln(2 kappa)/ln(1 - gamma) + 8 kappa^3 / gamma^2)))
/// ```
pub fn derive_eta(
    gradient_bound: f64,
    state_dim: usize,
    horizon: usize,
    gamma: f64,
    kappa: f64,
) -> Result<f64> {
    if !(gradient_bound > 0.0 && gradient_bound.is_finite()) {
        return Err(OncError::Config(format!(
            "gradient bound must be a finite positive value, got {gradient_bound}"
        )));
    }
    if state_dim == 0 || horizon == 0 {
        return Err(OncError::Config(
            "state dimension and horizon must be positive".into(),
        ));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OncError::Config(format!(
            "decay rate must lie in (0, 1), got {gamma}"
        )));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(OncError::Config(format!(
            "overshoot must be a finite value >= 1, got {kappa}"
        )));
    }
    let bracket = 1.0 - (2.0 * kappa).ln() / (1.0 - gamma).ln()
        + 8.0 * kappa.powi(3) / gamma.powi(2);
    let eta = 1.0
        / (5.0
            * gradient_bound
            * (2.0 * state_dim as f64 * horizon as f64 * bracket).sqrt());
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(OncError::Numerical(format!(
            "perturbation rate degenerated to {eta}"
        )));
    }
    Ok(eta)
}

/// Configuration for one batched-FTPL run.
#[derive(Debug, Clone)]
pub struct BatchFtplParams {
    /// Number of steps `T`.
    pub horizon: usize,
    /// Batch length `H`.
    pub batch_size: usize,
    /// Perturbation rate (the exponential draws have mean `1/eta`).
    pub eta: f64,
    /// Oracle accuracy per call.
    pub epsilon: f64,
    /// Master seed; the perturbation uses its own stream.
    pub rng_seed: u64,
    /// Component signs of the perturbation vector.
    pub sign_mode: SignMode,
    /// Track disturbances with a fixed auxiliary gain and learn on the
    /// disturbance-free component.
    pub disturbance_mode: bool,
    /// Auxiliary gain for disturbance mode.
    pub anchor: Option<StabilityCertificate>,
    /// Replaces the sampled perturbation (diagnostics only).
    pub sigma_override: Option<DVector<f64>>,
}

impl BatchFtplParams {
    fn validate(&self, system: &LtiSystem) -> Result<()> {
        if self.horizon == 0 {
            return Err(OncError::Config("horizon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(OncError::Config("batch size must be positive".into()));
        }
        if self.sigma_override.is_none() && !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(OncError::Config(format!(
                "perturbation rate must be a finite positive value, got {}",
                self.eta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OncError::Config(format!(
                "oracle accuracy must be a finite positive value, got {}",
                self.epsilon
            )));
        }
        if let Some(sigma) = &self.sigma_override {
            if sigma.len() != system.state_dim() {
                return Err(OncError::Dimension {
                    context: "perturbation override",
                    expected: system.state_dim().to_string(),
                    actual: sigma.len().to_string(),
                });
            }
        }
        if self.disturbance_mode && self.anchor.is_none() {
            return Err(OncError::Config(
                "disturbance mode needs an auxiliary gain".into(),
            ));
        }
        if let Some(anchor) = &self.anchor {
            if anchor.gain().nrows() != system.input_dim()
                || anchor.gain().ncols() != system.state_dim()
            {
                return Err(OncError::Dimension {
                    context: "auxiliary gain",
                    expected: format!("{}x{}", system.input_dim(), system.state_dim()),
                    actual: format!("{}x{}", anchor.gain().nrows(), anchor.gain().ncols()),
                });
            }
        }
        Ok(())
    }
}

/// Controller state between steps.
///
/// The cycle per step `t` is `control_input` then `observe`; `observe` runs
/// the oracle at batch boundaries, so the returned policy always reflects
/// every completed batch. The final batch may be partial and never triggers
/// an extra oracle call.
pub struct BatchFtplState<'a> {
    params: BatchFtplParams,
    system: &'a LtiSystem,
    bank: &'a ControllerBank,
    ball: &'a InputBall,
    oracle_config: OracleConfig,
    accumulator: CostAccumulator,
    scratch: OracleScratch,
    perturbation: PerturbationTerm,
    policy: AffinePolicy,
    target: DVector<f64>,
    batch_index: usize,
    steps_observed: usize,
    split: Option<SplitState>,
    records: Vec<BatchRecord>,
    update_seconds: Vec<f64>,
}

impl<'a> BatchFtplState<'a> {
    /// Samples the perturbation, runs the first oracle call (history empty,
    /// so the objective is the pure perturbation), and installs the batch-1
    /// policy.
    pub fn init(
        params: BatchFtplParams,
        system: &'a LtiSystem,
        bank: &'a ControllerBank,
        ball: &'a InputBall,
        x1: &DVector<f64>,
    ) -> Result<Self> {
        params.validate(system)?;
        if x1.len() != system.state_dim() {
            return Err(OncError::Dimension {
                context: "initial state",
                expected: system.state_dim().to_string(),
                actual: x1.len().to_string(),
            });
        }
        let sigma = match &params.sigma_override {
            Some(sigma) => PerturbationTerm::fixed(sigma.clone(), params.sign_mode),
            None => {
                let mut generator = rng(params.rng_seed, Stream::Sigma);
                PerturbationTerm::sample(
                    system.state_dim(),
                    params.eta,
                    params.sign_mode,
                    &mut generator,
                )?
            }
        };
        let mut accumulator = CostAccumulator::new(system.state_dim());
        accumulator.set_linear(sigma.sigma().clone());
        let oracle_config = OracleConfig::for_epsilon(params.epsilon, ball)?;
        let mut scratch = OracleScratch::for_bank(bank);
        let started = Instant::now();
        let first = approx_min(
            &accumulator,
            system,
            bank,
            ball,
            &oracle_config,
            Some(&mut scratch),
        )?;
        let elapsed = started.elapsed().as_secs_f64();
        let split = if params.disturbance_mode {
            Some(SplitState {
                nominal: x1.clone(),
                disturbance_driven: DVector::zeros(system.state_dim()),
            })
        } else {
            None
        };
        let mut state = Self {
            params,
            system,
            bank,
            ball,
            oracle_config,
            accumulator,
            scratch,
            perturbation: sigma,
            policy: first.target.policy.clone(),
            target: first.target.point.clone(),
            batch_index: 1,
            steps_observed: 0,
            split,
            records: Vec::new(),
            update_seconds: Vec::new(),
        };
        state.push_record(&first, elapsed);
        Ok(state)
    }

    fn push_record(&mut self, result: &OracleResult, seconds: f64) {
        self.records.push(BatchRecord {
            batch: self.batch_index,
            target: result.target.point.clone(),
            bank_index: result.bank_index,
            offset: result.target.policy.offset().clone(),
            value: result.value,
            oracle_seconds: seconds,
            inner_iterations: result.inner_iterations,
        });
        self.update_seconds.push(seconds);
    }

    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn policy(&self) -> &AffinePolicy {
        &self.policy
    }

    pub fn perturbation(&self) -> &DVector<f64> {
        self.perturbation.sigma()
    }

    pub fn split(&self) -> Option<&SplitState> {
        self.split.as_ref()
    }

    /// Input for the current step. In disturbance mode the physical state is
    /// tracked internally and `x` must be the physical state the caller
    /// integrated; only its split components enter the input.
    pub fn control_input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.system.state_dim() {
            return Err(OncError::Dimension {
                context: "control state",
                expected: self.system.state_dim().to_string(),
                actual: x.len().to_string(),
            });
        }
        match &self.split {
            None => Ok(self.policy.input(x)),
            Some(split) => {
                let anchor = self.params.anchor.as_ref().expect("validated");
                Ok(self.policy.input(&split.nominal) - anchor.gain() * &split.disturbance_driven)
            }
        }
    }

    /// Records the cost revealed for the step just played, advances the
    /// internal split (disturbance mode), and refreshes the policy when the
    /// step closed a non-final batch.
    pub fn observe(&mut self, stage: &StageCost, w: &DVector<f64>) -> Result<()> {
        if self.steps_observed >= self.params.horizon {
            return Err(OncError::Usage(format!(
                "observed more than {} steps",
                self.params.horizon
            )));
        }
        match &self.split {
            None => self.accumulator.push(stage),
            Some(split) => {
                // The learner sees the cost recentred around the
                // disturbance-driven component it cannot influence.
                self.accumulator
                    .push(&stage.translate(&split.disturbance_driven));
            }
        }
        if let Some(split) = &mut self.split {
            let anchor = self.params.anchor.as_ref().expect("validated");
            let nominal_input = self.policy.input(&split.nominal);
            let disturbance_input = -(anchor.gain() * &split.disturbance_driven);
            *split = step_split(self.system, split, &nominal_input, &disturbance_input, w)?;
        }
        self.steps_observed += 1;
        if self.steps_observed % self.params.batch_size == 0
            && self.steps_observed < self.params.horizon
        {
            let started = Instant::now();
            let next = approx_min(
                &self.accumulator,
                self.system,
                self.bank,
                self.ball,
                &self.oracle_config,
                Some(&mut self.scratch),
            )?;
            let elapsed = started.elapsed().as_secs_f64();
            self.batch_index += 1;
            self.policy = next.target.policy.clone();
            self.target = next.target.point.clone();
            self.push_record(&next, elapsed);
        }
        Ok(())
    }

    fn into_parts(self) -> (Vec<BatchRecord>, Vec<f64>) {
        (self.records, self.update_seconds)
    }
}

/// Rolls out the learner against a fixed cost sequence and disturbance
/// sequence from `x1`.
///
/// Recorded stage costs are always the raw costs at the physical state, so
/// disturbance-mode ledgers agree exactly with what an external monitor
/// evaluating `costs` along `states` would compute.
pub fn run(
    params: BatchFtplParams,
    system: &LtiSystem,
    bank: &ControllerBank,
    ball: &InputBall,
    costs: &CostSequence,
    disturbances: &[DVector<f64>],
    x1: &DVector<f64>,
) -> Result<RunTrace> {
    if costs.horizon() != params.horizon {
        return Err(OncError::Config(format!(
            "cost sequence covers {} steps but the run expects {}",
            costs.horizon(),
            params.horizon
        )));
    }
    if disturbances.len() != params.horizon {
        return Err(OncError::Config(format!(
            "disturbance sequence covers {} steps but the run expects {}",
            disturbances.len(),
            params.horizon
        )));
    }
    let started = Instant::now();
    let horizon = params.horizon;
    let disturbance_mode = params.disturbance_mode;
    let mut state = BatchFtplState::init(params, system, bank, ball, x1)?;

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    let mut cumulative = Vec::with_capacity(horizon);
    let mut update_index = Vec::with_capacity(horizon);
    let mut split_trace = disturbance_mode.then(Vec::new);

    let mut x = x1.clone();
    let mut running = 0.0;
    for t in 1..=horizon {
        if let (Some(trace), Some(split)) = (split_trace.as_mut(), state.split()) {
            trace.push(split.clone());
        }
        let u = state.control_input(&x)?;
        let cost = costs.stage(t).eval(&x);
        running += cost;
        let next = system.step(&x, &u, &disturbances[t - 1])?;
        if next.amax() > DIVERGENCE_BOUND {
            return Err(OncError::Divergence {
                step: t + 1,
                bound: DIVERGENCE_BOUND,
            });
        }
        states.push(x);
        inputs.push(u);
        stage_costs.push(cost);
        cumulative.push(running);
        update_index.push(state.batch_index());
        state.observe(costs.stage(t), &disturbances[t - 1])?;
        x = next;
    }
    if let (Some(trace), Some(split)) = (split_trace.as_mut(), state.split()) {
        trace.push(split.clone());
    }
    states.push(x);
    let (batches, update_seconds) = state.into_parts();
    Ok(RunTrace {
        states,
        inputs,
        stage_costs,
        cumulative,
        update_index,
        batches,
        split: split_trace,
        total_seconds: started.elapsed().as_secs_f64(),
        update_seconds,
    })
}
