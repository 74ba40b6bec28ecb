//! Step-level run records shared by the online controllers.

use nalgebra::DVector;

use crate::lti::SplitState;

/// One controller update (an oracle call or a gradient step).
#[derive(Debug, Clone)]
pub struct BatchRecord {
    /// 1-based batch number.
    pub batch: usize,
    /// Steady-state target the batch tracks.
    pub target: DVector<f64>,
    /// Bank index of the gain realizing the target.
    pub bank_index: usize,
    /// Ball offset realizing the target.
    pub offset: DVector<f64>,
    /// Objective value reported by the oracle.
    pub value: f64,
    /// Wall-clock seconds spent in the oracle call.
    pub oracle_seconds: f64,
    /// Projected-gradient iterations across all slices.
    pub inner_iterations: usize,
}

/// Complete rollout of one algorithm on one instance.
///
/// `states` retains the terminal state, so it is one longer than `inputs`.
/// `update_index` maps each step to the controller version that produced its
/// input: the batch number for the batched learner, the step index for a
/// per-step learner. Timing fields are measurements and are excluded from
/// determinism guarantees.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub update_index: Vec<usize>,
    pub batches: Vec<BatchRecord>,
    /// Split components per step (disturbance-mode runs only); parallel to
    /// `states`.
    pub split: Option<Vec<SplitState>>,
    pub total_seconds: f64,
    pub update_seconds: Vec<f64>,
}

impl RunTrace {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn total_cost(&self) -> f64 {
        *self.cumulative.last().expect("non-empty run")
    }
}
