//! Steady states reachable by affine strongly-stabilizing policies.
//!
//! Holding the affine policy `u = -K x + v` fixed drives the closed loop to
//! the unique fixed point `z` of `z = (A - BK) z + B v`. Sweeping `v` over
//! the input ball parametrizes the slice of steady states owned by `K` as
//! `z = S_K v` with `S_K = (I - A + BK)^{-1} B`; the learner's benchmark set
//! is the union of these slices over a bank of certified gains.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OncError, Result};
use crate::lti::LtiSystem;
use crate::numerics::{condition_1norm, spectral_norm};
use crate::stability::StabilityCertificate;

/// Condition-number gate for the steady-state solve.
const CONDITION_LIMIT: f64 = 1e12;

/// Euclidean ball constraining the offset `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBall {
    radius: f64,
}

impl InputBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(OncError::Config(format!(
                "input ball radius must be positive and finite, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, v: &DVector<f64>, slack: f64) -> bool {
        v.norm() <= self.radius * (1.0 + slack)
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let norm = v.norm();
        if norm <= self.radius {
            v.clone()
        } else {
            v * (self.radius / norm)
        }
    }
}

/// Affine state-feedback policy `u = -K x + v` with a certified gain.
#[derive(Debug, Clone)]
pub struct AffinePolicy {
    certificate: StabilityCertificate,
    offset: DVector<f64>,
}

impl AffinePolicy {
    pub fn new(certificate: StabilityCertificate, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != certificate.gain().nrows() {
            return Err(OncError::Dimension {
                context: "AffinePolicy offset",
                expected: certificate.gain().nrows().to_string(),
                actual: offset.len().to_string(),
            });
        }
        Ok(Self { certificate, offset })
    }

    pub fn certificate(&self) -> &StabilityCertificate {
        &self.certificate
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        self.certificate.gain()
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// Control input at state `x`.
    pub fn input(&self, x: &DVector<f64>) -> DVector<f64> {
        -(self.certificate.gain() * x) + &self.offset
    }
}

/// A steady state together with the policy that realizes it.
#[derive(Debug, Clone)]
pub struct SteadyStateTarget {
    pub point: DVector<f64>,
    pub policy: AffinePolicy,
}

/// Linear map `v -> z = S_K v` from ball offsets onto a gain's steady-state
/// slice (zero offset: `v = 0` maps to the origin).
#[derive(Debug, Clone)]
pub struct SliceMap {
    matrix: DMatrix<f64>,
}

impl SliceMap {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// Pull a gradient in state space back to offset space: `S^T g`.
    pub fn pullback(&self, g: &DVector<f64>) -> DVector<f64> {
        self.matrix.transpose() * g
    }
}

fn steady_state_lu(
    system: &LtiSystem,
    gain: &DMatrix<f64>,
) -> Result<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let n = system.state_dim();
    let closed = system.a() - system.b() * gain;
    let coeff = DMatrix::<f64>::identity(n, n) - closed;
    let cond = condition_1norm(&coeff)?;
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(OncError::Numerical(format!(
            "steady-state system I - A + BK is ill conditioned (cond_1 ~ {cond:.3e})"
        )));
    }
    Ok(coeff.lu())
}

/// Steady state of an affine policy: solves `(I - A + BK) z = B v` with
/// partial-pivot LU, rejecting condition numbers above 1e12.
pub fn steady_state_of(system: &LtiSystem, policy: &AffinePolicy) -> Result<SteadyStateTarget> {
    let lu = steady_state_lu(system, policy.gain())?;
    let rhs = system.b() * policy.offset();
    let point = lu.solve(&rhs).ok_or_else(|| {
        OncError::Numerical("steady-state solve failed despite condition gate".into())
    })?;
    Ok(SteadyStateTarget { point, policy: policy.clone() })
}

/// Slice parametrization `S_K = (I - A + BK)^{-1} B` for a certified gain.
pub fn ball_parametrization(
    system: &LtiSystem,
    certificate: &StabilityCertificate,
) -> Result<SliceMap> {
    let lu = steady_state_lu(system, certificate.gain())?;
    let n = system.state_dim();
    let m = system.input_dim();
    let mut s = DMatrix::<f64>::zeros(n, m);
    for j in 0..m {
        let rhs: DVector<f64> = system.b().column(j).into_owned();
        let col = lu.solve(&rhs).ok_or_else(|| {
            OncError::Numerical("steady-state solve failed despite condition gate".into())
        })?;
        s.set_column(j, &col);
    }
    Ok(SliceMap { matrix: s })
}

/// Sup-norm bound on any steady state reachable within the ball:
/// `|z|_inf <= (kappa / gamma) |B| U`.
pub fn target_sup_bound(
    system: &LtiSystem,
    certificate: &StabilityCertificate,
    ball: &InputBall,
) -> f64 {
    certificate.kappa() / certificate.gamma() * spectral_norm(system.b()) * ball.radius()
}
