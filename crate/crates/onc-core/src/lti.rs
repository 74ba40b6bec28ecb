//! Discrete-time linear time-invariant plant and simulation primitives.
//!
//! The plant model is `x_{t+1} = A x_t + B u_t + w_t` with dense `f64`
//! matrices. Dimensions are validated at construction so downstream code can
//! multiply without re-checking. Simulation guards against numerical
//! blow-up: any state coordinate leaving `[-1e12, 1e12]` aborts the run with
//! a divergence error identifying the step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OncError, Result};

/// Guard bound for state coordinates during simulation.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    /// Build a plant from its transition and input matrices.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(OncError::Dimension {
                context: "LtiSystem transition matrix",
                expected: "square".into(),
                actual: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(OncError::Dimension {
                context: "LtiSystem input matrix",
                expected: format!("{} rows, >0 cols", a.nrows()),
                actual: format!("{}x{}", b.nrows(), b.ncols()),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(OncError::Config("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// Three-state, two-input benchmark plant used by the built-in
    /// `paper-sec5` preset:
    /// `A = (1/3.6) [[1, 0.2, 0], [0, 1, 0.2], [0.2, 0, 1]]`,
    /// `B = [[0, 1], [0, 0], [1, 0]]`.
    pub fn benchmark_three_state() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.2, 0.2, 0.0, 1.0])
            / 3.6;
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        Self::new(a, b).expect("benchmark system is well formed")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// One step of the dynamics: `A x + B u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state("step state", x)?;
        self.check_input(u)?;
        self.check_state("step disturbance", w)?;
        Ok(&self.a * x + &self.b * u + w)
    }

    fn check_state(&self, context: &'static str, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(OncError::Dimension {
                context,
                expected: self.state_dim().to_string(),
                actual: x.len().to_string(),
            });
        }
        Ok(())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(OncError::Dimension {
                context: "step input",
                expected: self.input_dim().to_string(),
                actual: u.len().to_string(),
            });
        }
        Ok(())
    }
}

/// State split into a nominal component and a disturbance-driven component.
/// The physical state is always the sum of the two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub nominal: DVector<f64>,
    pub disturbance_driven: DVector<f64>,
}

impl SplitState {
    pub fn new(nominal: DVector<f64>, disturbance_driven: DVector<f64>) -> Self {
        assert_eq!(nominal.len(), disturbance_driven.len());
        Self { nominal, disturbance_driven }
    }

    /// Physical state reconstructed from the two components.
    pub fn physical(&self) -> DVector<f64> {
        &self.nominal + &self.disturbance_driven
    }
}

/// Advance a split state one step. The nominal part sees only its own input;
/// the disturbance-driven part absorbs its input and the disturbance:
/// `nominal' = A nominal + B u_nom`,
/// `disturbance' = A disturbance + B u_dist + w`.
/// Summing the two recovers a plain [`LtiSystem::step`] with `u = u_nom + u_dist`.
pub fn step_split(
    system: &LtiSystem,
    split: &SplitState,
    nominal_input: &DVector<f64>,
    disturbance_input: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<SplitState> {
    let nominal = system.a() * &split.nominal + system.b() * nominal_input;
    let disturbance_driven =
        system.a() * &split.disturbance_driven + system.b() * disturbance_input + w;
    if nominal.len() != w.len() {
        return Err(OncError::Dimension {
            context: "step_split disturbance",
            expected: nominal.len().to_string(),
            actual: w.len().to_string(),
        });
    }
    Ok(SplitState { nominal, disturbance_driven })
}

/// Closed-loop rollout record. `states` has one more entry than `inputs`
/// (the terminal state is retained).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Maximum residual `|x_{t+1} - (A x_t + B u_t + w_t)|` over the rollout.
    pub fn max_dynamics_residual(&self, system: &LtiSystem) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.len() {
            let predicted = system.a() * &self.states[t]
                + system.b() * &self.inputs[t]
                + &self.disturbances[t];
            worst = worst.max((&self.states[t + 1] - predicted).amax());
        }
        worst
    }
}

fn guard(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
        return Err(OncError::Divergence { step, bound: DIVERGENCE_BOUND });
    }
    Ok(())
}

/// Roll the plant forward under a state-feedback policy. The policy sees the
/// 1-based step index and the current state; `disturbances` supplies one
/// vector per step and fixes the rollout length.
pub fn simulate<F>(
    system: &LtiSystem,
    x1: DVector<f64>,
    mut policy: F,
    disturbances: &[DVector<f64>],
) -> Result<Trajectory>
where
    F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    guard(&x1, 1)?;
    let mut states = Vec::with_capacity(disturbances.len() + 1);
    let mut inputs = Vec::with_capacity(disturbances.len());
    states.push(x1);
    for (i, w) in disturbances.iter().enumerate() {
        let t = i + 1;
        let x = states.last().expect("non-empty state history");
        let u = policy(t, x);
        let next = system.step(x, &u, w)?;
        guard(&next, t + 1)?;
        inputs.push(u);
        states.push(next);
    }
    Ok(Trajectory { states, inputs, disturbances: disturbances.to_vec() })
}
