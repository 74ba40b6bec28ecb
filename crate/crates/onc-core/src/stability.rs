//! Strong-stability certificates and controller banks.
//!
//! A gain `K` is strongly stabilizing with parameters `(gamma, kappa)` when
//! the closed loop factors as `A - BK = H^{-1} J H` with `|J| <= 1 - gamma`
//! and `|H| |H^{-1}| <= kappa`. The factorization gives the explicit decay
//! envelope `|(A - BK)^t| <= kappa (1 - gamma)^t`, which is what the batched
//! controller relies on when it holds a policy for a fixed number of steps.
//!
//! Certificates are constructed from the discrete Lyapunov equation of the
//! scaled closed loop `M = (A - BK) / (1 - gamma)`: with
//! `M^T P M - P = -I` and `H = P^{1/2}`, the matrix `J = H M H^{-1} (1-gamma)`
//! is a contraction of norm at most `1 - gamma`, and
//! `kappa = sqrt(cond(P))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OncError, Result};
use crate::lti::LtiSystem;
use crate::numerics::{dare_gain, dlyap_series, spectral_norm, spectral_radius, sym_sqrt};
use crate::seeding::{rng, Stream};

/// Witnessed strong-stability parameters for one gain.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    gain: DMatrix<f64>,
    gamma: f64,
    kappa: f64,
    transform: DMatrix<f64>,
    transform_inv: DMatrix<f64>,
    contraction: DMatrix<f64>,
}

impl StabilityCertificate {
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Similarity transform `H` of the factorization.
    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Contraction factor `J`, `|J| <= 1 - gamma`.
    pub fn contraction(&self) -> &DMatrix<f64> {
        &self.contraction
    }

    /// Closed-loop matrix `A - B K`.
    pub fn closed_loop(&self, system: &LtiSystem) -> DMatrix<f64> {
        system.a() - system.b() * &self.gain
    }
}

/// Certify a gain at the requested decay rate.
///
/// Succeeds exactly when the spectral radius of `(A - BK) / (1 - target_gamma)`
/// is below 1. A gain with closed-loop spectral radius at or above 1 yields
/// [`OncError::NotStabilizing`]; a stable loop whose radius still exceeds
/// `1 - target_gamma` yields [`OncError::GammaTooAggressive`].
pub fn certify(
    system: &LtiSystem,
    gain: &DMatrix<f64>,
    target_gamma: f64,
) -> Result<StabilityCertificate> {
    if !(target_gamma > 0.0 && target_gamma < 1.0) {
        return Err(OncError::Config(format!(
            "target_gamma must lie in (0, 1), got {target_gamma}"
        )));
    }
    if gain.nrows() != system.input_dim() || gain.ncols() != system.state_dim() {
        return Err(OncError::Dimension {
            context: "certify gain",
            expected: format!("{}x{}", system.input_dim(), system.state_dim()),
            actual: format!("{}x{}", gain.nrows(), gain.ncols()),
        });
    }
    let closed = system.a() - system.b() * gain;
    let rho = spectral_radius(&closed);
    if rho >= 1.0 {
        return Err(OncError::NotStabilizing { rho });
    }
    if rho >= 1.0 - target_gamma {
        return Err(OncError::GammaTooAggressive { rho, gamma: target_gamma });
    }

    let scaled = &closed / (1.0 - target_gamma);
    let p = dlyap_series(&scaled)?;
    let transform = sym_sqrt(&p)?;
    let transform_inv = transform.clone().try_inverse().ok_or_else(|| {
        OncError::Numerical("Lyapunov square root is singular".into())
    })?;
    let eigenvalues = p.symmetric_eigen().eigenvalues;
    let (lo, hi) = eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    let kappa = (hi / lo).sqrt();
    let contraction = &transform * &scaled * &transform_inv * (1.0 - target_gamma);

    let cert = StabilityCertificate {
        gain: gain.clone(),
        gamma: target_gamma,
        kappa,
        transform,
        transform_inv,
        contraction,
    };
    cert.validate(&closed)?;
    Ok(cert)
}

impl StabilityCertificate {
    fn validate(&self, closed: &DMatrix<f64>) -> Result<()> {
        if !self.kappa.is_finite() || self.kappa < 1.0 - 1e-12 {
            return Err(OncError::Numerical(format!(
                "certificate kappa {} out of range",
                self.kappa
            )));
        }
        let contraction_norm = spectral_norm(&self.contraction);
        if contraction_norm > (1.0 - self.gamma) + 1e-10 {
            return Err(OncError::Numerical(format!(
                "contraction norm {contraction_norm} exceeds 1 - gamma"
            )));
        }
        let rebuilt = &self.transform_inv * &self.contraction * &self.transform;
        let rel = (&rebuilt - closed).norm() / closed.norm().max(1.0);
        if rel > 1e-8 {
            return Err(OncError::Numerical(format!(
                "similarity reconstruction off by relative {rel:e}"
            )));
        }
        Ok(())
    }
}

/// Norms of the closed-loop powers, `|(A - BK)^t|` for `t = 1..=horizon`.
pub fn power_norm_profile(
    system: &LtiSystem,
    gain: &DMatrix<f64>,
    horizon: usize,
) -> Vec<f64> {
    let closed = system.a() - system.b() * gain;
    let mut power = DMatrix::<f64>::identity(closed.nrows(), closed.ncols());
    let mut profile = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        power = &power * &closed;
        profile.push(spectral_norm(&power));
    }
    profile
}

/// A finite set of certified gains sharing a common decay target.
#[derive(Debug, Clone)]
pub struct ControllerBank {
    certificates: Vec<StabilityCertificate>,
    bank_gamma: f64,
    bank_kappa: f64,
    seed: u64,
    target_gamma: f64,
    kappa_cap: f64,
}

impl ControllerBank {
    /// Assemble a bank from explicitly certified gains. `bank_gamma` is the
    /// weakest gamma and `bank_kappa` the largest kappa across the set.
    pub fn from_certificates(
        certificates: Vec<StabilityCertificate>,
        seed: u64,
    ) -> Result<Self> {
        if certificates.is_empty() {
            return Err(OncError::Config("bank must contain at least one gain".into()));
        }
        let bank_gamma = certificates
            .iter()
            .map(|c| c.gamma)
            .fold(f64::INFINITY, f64::min);
        let bank_kappa = certificates.iter().map(|c| c.kappa).fold(0.0, f64::max);
        Ok(Self {
            certificates,
            bank_gamma,
            bank_kappa,
            seed,
            target_gamma: bank_gamma,
            kappa_cap: bank_kappa,
        })
    }

    pub fn certificates(&self) -> &[StabilityCertificate] {
        &self.certificates
    }

    pub fn len(&self) -> usize {
        self.certificates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certificates.is_empty()
    }

    /// Weakest decay rate across the bank (all certificates share it).
    pub fn bank_gamma(&self) -> f64 {
        self.bank_gamma
    }

    /// Largest conditioning constant across the bank.
    pub fn bank_kappa(&self) -> f64 {
        self.bank_kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// First certificate; used as the anchor/fallback policy elsewhere.
    pub fn anchor(&self) -> &StabilityCertificate {
        &self.certificates[0]
    }

    pub fn to_document(&self) -> BankDocument {
        BankDocument {
            seed: self.seed,
            target_gamma: self.target_gamma,
            kappa_cap: self.kappa_cap,
            bank_gamma: self.bank_gamma,
            bank_kappa: self.bank_kappa,
            kappas: self.certificates.iter().map(|c| c.kappa).collect(),
            gains: self
                .certificates
                .iter()
                .map(|c| matrix_rows(&c.gain))
                .collect(),
        }
    }

    /// Rebuild a bank from its serialized gains, re-deriving the witnesses.
    /// The stored kappas pin the expected conditioning; a mismatch means the
    /// document does not belong to this system.
    pub fn from_document(system: &LtiSystem, doc: &BankDocument) -> Result<Self> {
        if doc.gains.is_empty() {
            return Err(OncError::Config("bank document contains no gains".into()));
        }
        if doc.gains.len() != doc.kappas.len() {
            return Err(OncError::Config(
                "bank document gain/kappa counts differ".into(),
            ));
        }
        let mut certificates = Vec::with_capacity(doc.gains.len());
        for (rows, &recorded_kappa) in doc.gains.iter().zip(&doc.kappas) {
            let gain = rows_matrix(rows)?;
            let cert = certify(system, &gain, doc.target_gamma)?;
            let rel = (cert.kappa - recorded_kappa).abs() / recorded_kappa.max(1.0);
            if rel > 1e-6 {
                return Err(OncError::Config(format!(
                    "stored kappa {recorded_kappa} does not match re-derived {} \
                     (wrong system for this bank document?)",
                    cert.kappa
                )));
            }
            certificates.push(cert);
        }
        let bank_kappa = certificates.iter().map(|c| c.kappa).fold(0.0, f64::max);
        Ok(Self {
            certificates,
            bank_gamma: doc.target_gamma,
            bank_kappa,
            seed: doc.seed,
            target_gamma: doc.target_gamma,
            kappa_cap: doc.kappa_cap,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(system: &LtiSystem, json: &str) -> Result<Self> {
        let doc: BankDocument = serde_json::from_str(json)?;
        Self::from_document(system, &doc)
    }
}

/// Serialized form of a [`ControllerBank`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankDocument {
    pub seed: u64,
    pub target_gamma: f64,
    pub kappa_cap: f64,
    pub bank_gamma: f64,
    pub bank_kappa: f64,
    pub kappas: Vec<f64>,
    pub gains: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(OncError::Config("ragged or empty matrix rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

/// Populate a bank by rejection-sampling LQR gains.
///
/// Candidate gains come from random diagonal state and input weights with
/// entries uniform on `[0.1, 10]`, solved through the Riccati fixed point.
/// A candidate is kept when it certifies at `target_gamma` with
/// `kappa <= kappa_cap`. The zero gain is tried first so the open loop, when
/// it qualifies, is always the anchor. Sampling stops after `50 * count`
/// draws with a bank-generation error if the bank is still short.
pub fn generate_bank(
    system: &LtiSystem,
    count: usize,
    target_gamma: f64,
    kappa_cap: f64,
    seed: u64,
) -> Result<ControllerBank> {
    if count == 0 {
        return Err(OncError::Config("bank count must be positive".into()));
    }
    if !(kappa_cap >= 1.0) {
        return Err(OncError::Config(format!(
            "kappa_cap must be at least 1, got {kappa_cap}"
        )));
    }
    let n = system.state_dim();
    let m = system.input_dim();
    let mut sampler = rng(seed, Stream::Bank);
    let mut certificates: Vec<StabilityCertificate> = Vec::with_capacity(count);

    let zero_gain = DMatrix::<f64>::zeros(m, n);
    if let Ok(cert) = certify(system, &zero_gain, target_gamma) {
        if cert.kappa <= kappa_cap {
            certificates.push(cert);
        }
    }

    let max_attempts = 50 * count;
    let mut attempts = 0usize;
    while certificates.len() < count && attempts < max_attempts {
        attempts += 1;
        let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
            sampler.gen_range(0.1..=10.0)
        }));
        let r = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| {
            sampler.gen_range(0.1..=10.0)
        }));
        let gain = match dare_gain(system.a(), system.b(), &q, &r) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let cert = match certify(system, &gain, target_gamma) {
            Ok(c) => c,
            Err(_) => continue,
        };
        if cert.kappa > kappa_cap {
            continue;
        }
        let duplicate = certificates
            .iter()
            .any(|existing| (&existing.gain - &gain).amax() < 1e-12);
        if duplicate {
            continue;
        }
        certificates.push(cert);
    }

    if certificates.len() < count {
        return Err(OncError::BankGeneration {
            requested: count,
            succeeded: certificates.len(),
            attempts,
        });
    }
    let bank_kappa = certificates.iter().map(|c| c.kappa).fold(0.0, f64::max);
    Ok(ControllerBank {
        certificates,
        bank_gamma: target_gamma,
        bank_kappa,
        seed,
        target_gamma,
        kappa_cap,
    })
}
