//! Stage costs, batch windows, translations, and the perturbation term.
//!
//! The harness works with strongly convex quadratics
//! `f(x) = (x - c)^T Q (x - c)`, but every consumer in the crate goes through
//! the [`CostFn`] trait so other (possibly non-convex) costs can be plugged
//! in; guarantees then degrade as documented at the call sites.
//!
//! [`CostAccumulator`] is the oracle-facing objective: a running sum of
//! observed stage costs plus one linear perturbation term. For quadratic
//! stages it keeps sufficient statistics (`sum Q`, `sum Q c`, `sum c^T Q c`)
//! so accumulation and evaluation stay O(N^2) regardless of how many stages
//! have been absorbed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{OncError, Result};
use crate::numerics::spectral_norm;

/// Scalar cost with an analytic gradient.
pub trait CostFn: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// `f(x) = (x - c)^T Q (x - c)` with symmetric positive definite `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    weight: DMatrix<f64>,
    center: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(weight: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if !weight.is_square() || weight.nrows() != center.len() {
            return Err(OncError::Dimension {
                context: "QuadraticCost",
                expected: format!("{0}x{0} weight for center of length {0}", center.len()),
                actual: format!("{}x{}", weight.nrows(), weight.ncols()),
            });
        }
        let asym = (&weight - weight.transpose()).amax();
        if asym > 1e-12 * weight.amax().max(1.0) {
            return Err(OncError::Config(format!(
                "quadratic weight must be symmetric (asymmetry {asym:e})"
            )));
        }
        let min_eig = weight
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if !(min_eig > 0.0) {
            return Err(OncError::Config(format!(
                "quadratic weight must be positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { weight, center })
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl CostFn for QuadraticCost {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        (&self.weight * &d).dot(&d)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.center;
        (&self.weight * &d) * 2.0
    }
}

/// One stage of a cost sequence. Quadratics stay first-class so downstream
/// code can use their closed forms; anything else rides behind a trait object.
#[derive(Clone)]
pub enum StageCost {
    Quadratic(QuadraticCost),
    General(Arc<dyn CostFn>),
}

impl std::fmt::Debug for StageCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageCost::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            StageCost::General(_) => f.write_str("General(..)"),
        }
    }
}

impl StageCost {
    /// Translated stage for the accumulator: for quadratics the shift folds
    /// into the center (`x -> x + s` is `c -> c - s`), keeping the sufficient
    /// statistics path; general costs wrap in a [`TranslatedCost`].
    pub fn translate(&self, shift: &DVector<f64>) -> StageCost {
        match self {
            StageCost::Quadratic(q) => StageCost::Quadratic(QuadraticCost {
                weight: q.weight.clone(),
                center: &q.center - shift,
            }),
            StageCost::General(g) => StageCost::General(Arc::new(TranslatedCost {
                base: Arc::clone(g),
                shift: shift.clone(),
            })),
        }
    }
}

impl CostFn for StageCost {
    fn dim(&self) -> usize {
        match self {
            StageCost::Quadratic(q) => q.dim(),
            StageCost::General(g) => g.dim(),
        }
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            StageCost::Quadratic(q) => q.eval(x),
            StageCost::General(g) => g.eval(x),
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            StageCost::Quadratic(q) => q.gradient(x),
            StageCost::General(g) => g.gradient(x),
        }
    }
}

/// Composition `g(x) = f(x + shift)`. Evaluation goes through the base cost
/// at the literally shifted argument, so `g(x_bar)` and `f(x_bar + shift)`
/// are the same floating-point computation, not merely equal to tolerance.
pub struct TranslatedCost {
    base: Arc<dyn CostFn>,
    shift: DVector<f64>,
}

impl TranslatedCost {
    pub fn new(base: Arc<dyn CostFn>, shift: DVector<f64>) -> Self {
        Self { base, shift }
    }
}

impl CostFn for TranslatedCost {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.base.eval(&(x + &self.shift))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.base.gradient(&(x + &self.shift))
    }
}

/// Sign handling for the perturbation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    /// Nonnegative coordinates, exactly as drawn.
    #[default]
    Literal,
    /// Each coordinate's sign flipped independently with probability 1/2.
    RandomSign,
}

/// Linear perturbation `f_0(z) = <sigma, z>` with `sigma_i ~ Exp(rate eta)`,
/// drawn once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTerm {
    sigma: DVector<f64>,
    mode: SignMode,
}

impl PerturbationTerm {
    pub fn sample<R: Rng>(dim: usize, eta: f64, mode: SignMode, rng: &mut R) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(OncError::Config(format!(
                "perturbation rate eta must be positive and finite, got {eta}"
            )));
        }
        let exp = Exp::new(eta)
            .map_err(|e| OncError::Config(format!("invalid exponential rate: {e}")))?;
        let sigma = DVector::from_fn(dim, |_, _| {
            let magnitude = exp.sample(rng);
            match mode {
                SignMode::Literal => magnitude,
                SignMode::RandomSign => {
                    if rng.gen::<bool>() {
                        magnitude
                    } else {
                        -magnitude
                    }
                }
            }
        });
        Ok(Self { sigma, mode })
    }

    /// Fixed perturbation vector; test hook and replay path.
    pub fn fixed(sigma: DVector<f64>, mode: SignMode) -> Self {
        Self { sigma, mode }
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn mode(&self) -> SignMode {
        self.mode
    }

    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        self.sigma.dot(z)
    }
}

/// Horizon-length cost sequence with the scale constants used to derive the
/// learner's tuning (gradient bound `L`, domain radius `D`).
#[derive(Debug, Clone)]
pub struct CostSequence {
    stages: Vec<StageCost>,
    lipschitz_scale: f64,
    domain_radius: f64,
}

impl CostSequence {
    pub fn new(stages: Vec<StageCost>, lipschitz_scale: f64, domain_radius: f64) -> Result<Self> {
        if stages.is_empty() {
            return Err(OncError::Config("cost sequence must be non-empty".into()));
        }
        let dim = stages[0].dim();
        if stages.iter().any(|s| s.dim() != dim) {
            return Err(OncError::Config(
                "all stages must share one state dimension".into(),
            ));
        }
        if !(lipschitz_scale > 0.0 && domain_radius > 0.0) {
            return Err(OncError::Config(
                "lipschitz_scale and domain_radius must be positive".into(),
            ));
        }
        Ok(Self { stages, lipschitz_scale, domain_radius })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    /// Stage cost at 1-based time `t`.
    pub fn stage(&self, t: usize) -> &StageCost {
        &self.stages[t - 1]
    }

    pub fn stages(&self) -> &[StageCost] {
        &self.stages
    }

    pub fn lipschitz_scale(&self) -> f64 {
        self.lipschitz_scale
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    /// Stages of batch `n` (1-based) under batch size `h`: times
    /// `(n-1)h + 1 ..= min(nh, T)`. The trailing batch may be short; a batch
    /// entirely past the horizon is a usage error.
    pub fn batch_cost(&self, n: usize, h: usize) -> Result<BatchCost<'_>> {
        if n == 0 || h == 0 {
            return Err(OncError::Usage("batch index and size are 1-based".into()));
        }
        let start = (n - 1) * h + 1;
        let end = (n * h).min(self.horizon());
        if start > self.horizon() {
            return Err(OncError::Usage(format!(
                "batch {n} starts past the horizon {}",
                self.horizon()
            )));
        }
        Ok(BatchCost { stages: &self.stages[start - 1..end] })
    }

    /// Spot-check `|grad f_t(x)| <= L D` for `|x| <= D` at sampled points.
    pub fn check_gradient_bound<R: Rng>(&self, rng: &mut R, samples: usize) -> Result<()> {
        let dim = self.dim();
        let bound = self.lipschitz_scale * self.domain_radius;
        for _ in 0..samples {
            let mut x = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let norm = x.norm();
            if norm > 0.0 {
                x *= rng.gen_range(0.0..1.0) * self.domain_radius / norm;
            }
            for (t, stage) in self.stages.iter().enumerate() {
                let g = stage.gradient(&x).norm();
                if g > bound * (1.0 + 1e-9) {
                    return Err(OncError::Config(format!(
                        "gradient bound violated at stage {}: |grad| = {g:.3e} > L*D = {bound:.3e}",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sum of the stages inside one batch window.
pub struct BatchCost<'a> {
    stages: &'a [StageCost],
}

impl BatchCost<'_> {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stages(&self) -> &[StageCost] {
        self.stages
    }
}

impl CostFn for BatchCost<'_> {
    fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.stages.iter().map(|s| s.eval(x)).sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for s in self.stages {
            g += s.gradient(x);
        }
        g
    }
}

/// Running objective `<linear, z> + sum_tau f_tau(z)` with a closed quadratic
/// form for the quadratic stages.
#[derive(Clone)]
pub struct CostAccumulator {
    dim: usize,
    weight_sum: DMatrix<f64>,
    weighted_center_sum: DVector<f64>,
    constant: f64,
    linear: DVector<f64>,
    general: Vec<Arc<dyn CostFn>>,
    stage_count: usize,
}

impl std::fmt::Debug for CostAccumulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostAccumulator")
            .field("dim", &self.dim)
            .field("stage_count", &self.stage_count)
            .field("general_stages", &self.general.len())
            .finish()
    }
}

impl CostAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            weight_sum: DMatrix::zeros(dim, dim),
            weighted_center_sum: DVector::zeros(dim),
            constant: 0.0,
            linear: DVector::zeros(dim),
            general: Vec::new(),
            stage_count: 0,
        }
    }

    /// Set the linear term (the perturbation). Replaces any previous one.
    pub fn set_linear(&mut self, sigma: DVector<f64>) {
        assert_eq!(sigma.len(), self.dim);
        self.linear = sigma;
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    /// Absorb one stage cost.
    pub fn push(&mut self, stage: &StageCost) {
        match stage {
            StageCost::Quadratic(q) => {
                debug_assert_eq!(q.dim(), self.dim);
                self.weight_sum += q.weight();
                let qc = q.weight() * q.center();
                self.constant += qc.dot(q.center());
                self.weighted_center_sum += qc;
            }
            StageCost::General(g) => self.general.push(Arc::clone(g)),
        }
        self.stage_count += 1;
    }

    pub fn stage_count(&self) -> usize {
        self.stage_count
    }

    /// Sum of the quadratic stages' weights (the Hessian is twice this),
    /// available when no general stages have been absorbed.
    pub fn quadratic_weight_sum(&self) -> Option<&DMatrix<f64>> {
        self.general.is_empty().then_some(&self.weight_sum)
    }

    pub fn has_general_stages(&self) -> bool {
        !self.general.is_empty()
    }
}

impl CostFn for CostAccumulator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &DVector<f64>) -> f64 {
        let quad = (&self.weight_sum * z).dot(z) - 2.0 * self.weighted_center_sum.dot(z)
            + self.constant;
        let gen: f64 = self.general.iter().map(|g| g.eval(z)).sum();
        quad + gen + self.linear.dot(z)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = (&self.weight_sum * z) * 2.0 - &self.weighted_center_sum * 2.0;
        g += &self.linear;
        for gen in &self.general {
            g += gen.gradient(z);
        }
        g
    }
}

/// Default gradient-scale constant for a quadratic family over a ball of
/// radius `domain_radius`: the tightest `L` with
/// `max_t sup_{|x| <= D} |grad f_t(x)| <= L D`,
/// namely `max_t 2 |Q_t| (D + |c_t|) / D`.
pub fn quadratic_gradient_scale(stages: &[StageCost], domain_radius: f64) -> Result<f64> {
    let mut scale: f64 = 0.0;
    for stage in stages {
        match stage {
            StageCost::Quadratic(q) => {
                let l = 2.0 * spectral_norm(q.weight())
                    * (domain_radius + q.center().norm())
                    / domain_radius;
                scale = scale.max(l);
            }
            StageCost::General(_) => {
                return Err(OncError::Config(
                    "gradient scale default requires quadratic stages; \
                     supply lipschitz_scale explicitly for general costs"
                        .into(),
                ))
            }
        }
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_gradient;
    use crate::seeding::{rng, Stream};
    use approx::assert_relative_eq;

    fn sample_quadratic(seed: u64, dim: usize) -> QuadraticCost {
        let mut r = rng(seed, Stream::Probe);
        let d = DMatrix::from_fn(dim, dim, |_, _| r.gen_range(-1.0..1.0));
        let weight = &d.transpose() * &d + DMatrix::identity(dim, dim) * 0.1;
        let center = DVector::from_fn(dim, |_, _| r.gen_range(-5.0..5.0));
        QuadraticCost::new(weight, center).unwrap()
    }

    #[test]
    fn identity_weight_example() {
        let q = QuadraticCost::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let x = DVector::zeros(2);
        assert_relative_eq!(q.eval(&x), 2.0, epsilon = 1e-15);
        let g = q.gradient(&x);
        assert_relative_eq!(g[0], -2.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite_weights() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(QuadraticCost::new(asym, DVector::zeros(2)).is_err());
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(QuadraticCost::new(indefinite, DVector::zeros(2)).is_err());
        let singular = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(QuadraticCost::new(singular, DVector::zeros(2)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut probe = rng(42, Stream::Probe);
        for trial in 0..20 {
            let q = sample_quadratic(trial, 3);
            let x = DVector::from_fn(3, |_, _| probe.gen_range(-4.0..4.0));
            let analytic = q.gradient(&x);
            let numeric = fd_gradient(|y| q.eval(y), &x);
            let rel = (&analytic - &numeric).norm() / analytic.norm().max(1.0);
            assert!(rel < 1e-6, "trial {trial}: relative gradient error {rel:e}");
        }
    }

    #[test]
    fn translation_is_bit_exact_composition() {
        let q = sample_quadratic(7, 3);
        let base: Arc<dyn CostFn> = Arc::new(q.clone());
        let shift = DVector::from_vec(vec![0.125, -2.7, 0.3333333333333333]);
        let translated = TranslatedCost::new(base, shift.clone());
        let x_bar = DVector::from_vec(vec![1.0 / 3.0, 0.7, -0.1]);
        let lhs = translated.eval(&x_bar);
        let rhs = q.eval(&(&x_bar + &shift));
        assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn recentred_quadratic_matches_translation_to_tolerance() {
        let q = sample_quadratic(9, 3);
        let stage = StageCost::Quadratic(q.clone());
        let shift = DVector::from_vec(vec![0.4, -0.9, 2.2]);
        let recentred = stage.translate(&shift);
        let x = DVector::from_vec(vec![-1.0, 0.25, 0.5]);
        assert_relative_eq!(
            recentred.eval(&x),
            q.eval(&(&x + &shift)),
            max_relative = 1e-12
        );
    }

    #[test]
    fn batch_partition_covers_horizon_with_short_tail() {
        let stages: Vec<StageCost> = (0..7)
            .map(|i| StageCost::Quadratic(sample_quadratic(i as u64, 2)))
            .collect();
        let seq = CostSequence::new(stages, 10.0, 10.0).unwrap();
        assert_eq!(seq.batch_cost(1, 3).unwrap().len(), 3);
        assert_eq!(seq.batch_cost(2, 3).unwrap().len(), 3);
        assert_eq!(seq.batch_cost(3, 3).unwrap().len(), 1);
        assert!(matches!(seq.batch_cost(4, 3), Err(OncError::Usage(_))));
        // Batches tile the horizon exactly once.
        let x = DVector::from_vec(vec![0.5, -0.5]);
        let total: f64 = (1..=3).map(|n| seq.batch_cost(n, 3).unwrap().eval(&x)).sum();
        let direct: f64 = (1..=7).map(|t| seq.stage(t).eval(&x)).sum();
        assert_relative_eq!(total, direct, max_relative = 1e-12);
    }

    #[test]
    fn accumulator_matches_explicit_sum() {
        let mut acc = CostAccumulator::new(3);
        let stages: Vec<QuadraticCost> = (0..6).map(|i| sample_quadratic(100 + i, 3)).collect();
        let sigma = DVector::from_vec(vec![0.3, 1.7, -0.2]);
        acc.set_linear(sigma.clone());
        for q in &stages {
            acc.push(&StageCost::Quadratic(q.clone()));
        }
        assert_eq!(acc.stage_count(), 6);
        let z = DVector::from_vec(vec![1.2, -0.4, 2.0]);
        let direct: f64 =
            stages.iter().map(|q| q.eval(&z)).sum::<f64>() + sigma.dot(&z);
        assert_relative_eq!(acc.eval(&z), direct, max_relative = 1e-12);
        let direct_grad = stages
            .iter()
            .fold(sigma.clone(), |acc_g, q| acc_g + q.gradient(&z));
        assert!((acc.gradient(&z) - direct_grad).amax() < 1e-10);
        let numeric = fd_gradient(|y| acc.eval(y), &z);
        let rel = (acc.gradient(&z) - &numeric).norm() / numeric.norm().max(1.0);
        assert!(rel < 1e-6);
    }

    #[test]
    fn literal_perturbation_is_nonnegative_with_mean_near_rate_inverse() {
        let mut r = rng(5, Stream::Sigma);
        let eta = 0.5;
        let p = PerturbationTerm::sample(4000, eta, SignMode::Literal, &mut r).unwrap();
        assert!(p.sigma().iter().all(|&s| s >= 0.0));
        let mean = p.sigma().sum() / 4000.0;
        assert_relative_eq!(mean, 1.0 / eta, max_relative = 0.1);
        let z = DVector::from_element(4000, 2.0);
        assert_relative_eq!(p.eval(&z), 2.0 * p.sigma().sum(), max_relative = 1e-12);
    }

    #[test]
    fn random_sign_mode_mixes_signs() {
        let mut r = rng(6, Stream::Sigma);
        let p = PerturbationTerm::sample(256, 1.0, SignMode::RandomSign, &mut r).unwrap();
        let negatives = p.sigma().iter().filter(|&&s| s < 0.0).count();
        assert!(negatives > 64 && negatives < 192);
    }

    #[test]
    fn gradient_bound_spot_check_accepts_derived_scale() {
        let stages: Vec<StageCost> = (0..10)
            .map(|i| StageCost::Quadratic(sample_quadratic(i, 3)))
            .collect();
        let radius = 25.0;
        let scale = quadratic_gradient_scale(&stages, radius).unwrap();
        let seq = CostSequence::new(stages, scale, radius).unwrap();
        let mut r = rng(11, Stream::Probe);
        seq.check_gradient_bound(&mut r, 50).unwrap();
    }
}
