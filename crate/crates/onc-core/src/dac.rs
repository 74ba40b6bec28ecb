//! Disturbance-action controller baseline with per-step gradient updates.
//!
//! The policy superimposes a linear function of recent disturbances on a
//! fixed stabilizing gain:
//!
//! ```text
//!   u_t = -K x_t + sum_{j=1}^{m} M[j] w_{t-j}
//! ```
//!
//! After each step the coefficients take a projected gradient step on the
//! truncated counterfactual state
//!
//! ```text
//!   y_t(M) = sum_{i=1}^{h} Abar^{i-1} (B q_{t-i}(M) + w_{t-i}),
//!   q_s(M) = sum_{j=1}^{m} M[j] w_{s-j},
//! ```
//!
//! the state the loop would have reached had `M` been in force throughout.
//! Disturbances are never observed directly; they are recovered from the
//! realized transition as `w_t = x_{t+1} - A x_t - B u_t`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::costs::{CostFn, CostSequence, StageCost};
use crate::error::{OncError, Result};
use crate::lti::{LtiSystem, DIVERGENCE_BOUND};
use crate::stability::StabilityCertificate;
use crate::trace::RunTrace;

/// Configuration for one disturbance-action run.
#[derive(Debug, Clone)]
pub struct DacParams {
    /// Number of steps `T`.
    pub horizon: usize,
    /// Coefficient memory `m` (matrices in the policy).
    pub memory: usize,
    /// Truncation depth `h` of the counterfactual state.
    pub truncation: usize,
    /// Gradient step size.
    pub learning_rate: f64,
    /// Frobenius radius of the ball each coefficient matrix is kept in.
    pub coefficient_bound: f64,
    /// Stabilizing gain the coefficients ride on.
    pub anchor: StabilityCertificate,
}

impl DacParams {
    /// Step size `1 / sqrt(T)`.
    pub fn default_learning_rate(horizon: usize) -> f64 {
        1.0 / (horizon as f64).sqrt()
    }

    fn validate(&self, system: &LtiSystem) -> Result<()> {
        if self.horizon == 0 {
            return Err(OncError::Config("horizon must be positive".into()));
        }
        if self.memory == 0 || self.truncation == 0 {
            return Err(OncError::Config(
                "coefficient memory and truncation depth must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OncError::Config(format!(
                "learning rate must be a finite positive value, got {}",
                self.learning_rate
            )));
        }
        if !(self.coefficient_bound > 0.0 && self.coefficient_bound.is_finite()) {
            return Err(OncError::Config(format!(
                "coefficient bound must be a finite positive value, got {}",
                self.coefficient_bound
            )));
        }
        if self.anchor.gain().nrows() != system.input_dim()
            || self.anchor.gain().ncols() != system.state_dim()
        {
            return Err(OncError::Dimension {
                context: "anchor gain",
                expected: format!("{}x{}", system.input_dim(), system.state_dim()),
                actual: format!(
                    "{}x{}",
                    self.anchor.gain().nrows(),
                    self.anchor.gain().ncols()
                ),
            });
        }
        Ok(())
    }
}

/// Controller state between steps.
pub struct DacState<'a> {
    params: DacParams,
    system: &'a LtiSystem,
    coefficients: Vec<DMatrix<f64>>,
    /// Recovered disturbances `w_1 .. w_t`.
    history: Vec<DVector<f64>>,
    /// `Abar^{i-1}` for `i = 1..=h` with `Abar = A - B K`.
    closed_powers: Vec<DMatrix<f64>>,
    /// `Abar^{i-1} B` for `i = 1..=h`.
    input_powers: Vec<DMatrix<f64>>,
    steps_observed: usize,
    update_seconds: Vec<f64>,
}

impl<'a> DacState<'a> {
    pub fn init(params: DacParams, system: &'a LtiSystem) -> Result<Self> {
        params.validate(system)?;
        let n = system.state_dim();
        let m = system.input_dim();
        let closed = system.a() - system.b() * params.anchor.gain();
        let mut closed_powers = Vec::with_capacity(params.truncation);
        let mut input_powers = Vec::with_capacity(params.truncation);
        let mut power = DMatrix::identity(n, n);
        for _ in 0..params.truncation {
            input_powers.push(&power * system.b());
            closed_powers.push(power.clone());
            power = &closed * power;
        }
        let coefficients = vec![DMatrix::zeros(m, n); params.memory];
        Ok(Self {
            params,
            system,
            coefficients,
            history: Vec::new(),
            closed_powers,
            input_powers,
            steps_observed: 0,
            update_seconds: Vec::new(),
        })
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    pub fn recovered_disturbances(&self) -> &[DVector<f64>] {
        &self.history
    }

    /// Disturbance `w_s`, taking steps before the start as zero.
    fn disturbance(&self, s: isize) -> DVector<f64> {
        if s >= 1 && (s as usize) <= self.history.len() {
            self.history[s as usize - 1].clone()
        } else {
            DVector::zeros(self.system.state_dim())
        }
    }

    /// Coefficient part of the input at step `s`: `q_s = sum_j M[j] w_{s-j}`.
    fn coefficient_input(&self, s: isize) -> DVector<f64> {
        let mut q = DVector::zeros(self.system.input_dim());
        for (j, coeff) in self.coefficients.iter().enumerate() {
            let w = self.disturbance(s - (j as isize + 1));
            if w.amax() != 0.0 {
                q += coeff * w;
            }
        }
        q
    }

    /// Input for the current step.
    pub fn control_input(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.system.state_dim() {
            return Err(OncError::Dimension {
                context: "control state",
                expected: self.system.state_dim().to_string(),
                actual: x.len().to_string(),
            });
        }
        let t = self.steps_observed as isize + 1;
        Ok(-(self.params.anchor.gain() * x) + self.coefficient_input(t))
    }

    /// Counterfactual state `y_t` under the current coefficients, built from
    /// disturbances strictly before `t`.
    pub fn surrogate_state(&self, t: isize) -> DVector<f64> {
        let mut y = DVector::zeros(self.system.state_dim());
        for i in 1..=self.params.truncation as isize {
            let w = self.disturbance(t - i);
            let q = self.coefficient_input(t - i);
            y += &self.input_powers[i as usize - 1] * q + &self.closed_powers[i as usize - 1] * w;
        }
        y
    }

    /// Gradient of `stage(y_t(M))` in the coefficient matrices.
    pub fn surrogate_gradient(&self, stage: &StageCost, t: isize) -> Vec<DMatrix<f64>> {
        let y = self.surrogate_state(t);
        let g = stage.gradient(&y);
        let mut grads = Vec::with_capacity(self.params.memory);
        for j in 1..=self.params.memory as isize {
            let mut grad = DMatrix::zeros(self.system.input_dim(), self.system.state_dim());
            for i in 1..=self.params.truncation as isize {
                let w = self.disturbance(t - i - j);
                if w.amax() != 0.0 {
                    grad += (self.input_powers[i as usize - 1].transpose() * &g) * w.transpose();
                }
            }
            grads.push(grad);
        }
        grads
    }

    /// Recovers the step's disturbance from the realized transition and takes
    /// one projected gradient step on the revealed cost.
    pub fn observe(
        &mut self,
        stage: &StageCost,
        x: &DVector<f64>,
        u: &DVector<f64>,
        next_x: &DVector<f64>,
    ) -> Result<()> {
        if self.steps_observed >= self.params.horizon {
            return Err(OncError::Usage(format!(
                "observed more than {} steps",
                self.params.horizon
            )));
        }
        let recovered = next_x - self.system.a() * x - self.system.b() * u;
        self.history.push(recovered);
        self.steps_observed += 1;
        let started = Instant::now();
        let t = self.steps_observed as isize;
        let grads = self.surrogate_gradient(stage, t);
        for (coeff, grad) in self.coefficients.iter_mut().zip(&grads) {
            *coeff -= self.params.learning_rate * grad;
            let norm = coeff.norm();
            if norm > self.params.coefficient_bound {
                *coeff *= self.params.coefficient_bound / norm;
            }
        }
        self.update_seconds.push(started.elapsed().as_secs_f64());
        Ok(())
    }
}

/// Rolls out the controller against a fixed cost sequence and disturbance
/// sequence from `x1`. The trace's `update_index` is the step number: the
/// coefficients change every step.
pub fn run(
    params: DacParams,
    system: &LtiSystem,
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
    if x1.len() != system.state_dim() {
        return Err(OncError::Dimension {
            context: "initial state",
            expected: system.state_dim().to_string(),
            actual: x1.len().to_string(),
        });
    }
    let started = Instant::now();
    let horizon = params.horizon;
    let mut state = DacState::init(params, system)?;

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    let mut cumulative = Vec::with_capacity(horizon);
    let mut update_index = Vec::with_capacity(horizon);

    let mut x = x1.clone();
    let mut running = 0.0;
    for t in 1..=horizon {
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
        state.observe(costs.stage(t), &x, &u, &next)?;
        states.push(x);
        inputs.push(u);
        stage_costs.push(cost);
        cumulative.push(running);
        update_index.push(t);
        x = next;
    }
    states.push(x);
    Ok(RunTrace {
        states,
        inputs,
        stage_costs,
        cumulative,
        update_index,
        batches: Vec::new(),
        split: None,
        total_seconds: started.elapsed().as_secs_f64(),
        update_seconds: state.update_seconds,
    })
}
