//! Online control of a known linear system against adversarial convex costs.
//!
//! The library provides two learners over the same plant model:
//!
//! - [`batch_ftpl`]: a batched follow-the-perturbed-leader scheme that plays
//!   affine policies realizing steady-state targets, refreshed by an
//!   approximate oracle at batch boundaries.
//! - [`dac`]: a disturbance-action baseline that adapts a linear function of
//!   recent disturbances by per-step projected gradient steps.
//!
//! Supporting layers: certified strong stability ([`stability`]), the
//! steady-state geometry the batched learner optimizes over
//! ([`steady_state`]), the cost-model and perturbation types ([`costs`]), the
//! oracle itself ([`oracle`]), and reproducible experiment drivers
//! ([`harness`]).

pub mod batch_ftpl;
pub mod costs;
pub mod dac;
pub mod error;
pub mod harness;
pub mod lti;
pub mod numerics;
pub mod oracle;
pub mod seeding;
pub mod stability;
pub mod steady_state;
pub mod trace;

pub use batch_ftpl::{derive_batch_size, derive_eta, BatchFtplParams, BatchFtplState};
pub use costs::{
    CostAccumulator, CostFn, CostSequence, PerturbationTerm, QuadraticCost, SignMode, StageCost,
};
pub use dac::{DacParams, DacState};
pub use error::{OncError, Result};
pub use lti::{LtiSystem, SplitState, Trajectory, DIVERGENCE_BOUND};
pub use oracle::{approx_min, OracleConfig, OracleResult, OracleScratch};
pub use seeding::{derive_seed, rng, Stream};
pub use stability::{certify, generate_bank, ControllerBank, StabilityCertificate};
pub use steady_state::{
    ball_parametrization, steady_state_of, target_sup_bound, AffinePolicy, InputBall, SliceMap,
    SteadyStateTarget,
};
pub use trace::{BatchRecord, RunTrace};
