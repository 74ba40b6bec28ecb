//! Small dense-matrix numerical kernels shared across the crate.
//!
//! Everything here targets the regime the rest of the crate lives in:
//! row-major `f64` matrices of modest dimension (states and inputs up to a
//! few tens), where direct methods are cheap and robust.

use nalgebra::{DMatrix, DVector};

use crate::error::{OncError, Result};

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Spectral radius via power iteration with an eigenvalue fallback.
///
/// Power iteration tracks the growth factor `|M x_k|`; convergence is declared
/// once the estimate is stable to 1e-10 over several consecutive iterations.
/// A complex dominant pair makes the estimate oscillate instead of settling,
/// in which case we fall back to a full (Schur-based) eigenvalue computation.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    const TOL: f64 = 1e-10;
    const CAP: usize = 10_000;
    const STABLE_STEPS: usize = 5;

    // Deterministic start with irrational-ish coordinates so it is not
    // orthogonal to the dominant eigenvector for the matrices we meet.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i as f64) * 0.7548776662).sin() * 0.5);
    x /= x.norm();

    let mut prev = f64::NAN;
    let mut stable = 0usize;
    for _ in 0..CAP {
        let y = m * &x;
        let est = y.norm();
        if est < 1e-300 {
            // Numerically nilpotent action on this vector chain.
            return 0.0;
        }
        if (est - prev).abs() <= TOL * est.max(1.0) {
            stable += 1;
            if stable >= STABLE_STEPS {
                return est;
            }
        } else {
            stable = 0;
        }
        prev = est;
        x = y / est;
    }
    m.complex_eigenvalues().iter().fold(0.0, |acc: f64, l| acc.max(l.norm()))
}

/// Symmetric positive-definite square root via eigendecomposition.
pub fn sym_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(OncError::Numerical(
            "matrix square root requires a positive definite input".into(),
        ));
    }
    let sqrt_d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * sqrt_d * eig.eigenvectors.transpose())
}

/// Solve the discrete Lyapunov equation `M^T P M - P = -I` by summing the
/// series `P = sum_k (M^T)^k M^k`, truncated once a term's Frobenius norm
/// falls below 1e-14. Requires the spectral radius of `M` to be below 1.
pub fn dlyap_series(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    const CAP: usize = 10_000_000;
    for _ in 0..CAP {
        term = m.transpose() * &term * m;
        let norm = term.norm();
        if !norm.is_finite() {
            return Err(OncError::Numerical(
                "Lyapunov series diverged; matrix is not a stable contraction".into(),
            ));
        }
        if norm < 1e-14 {
            return Ok(p);
        }
        p += &term;
    }
    Err(OncError::Numerical(
        "Lyapunov series did not converge within the iteration cap".into(),
    ))
}

/// Exact 1-norm condition number for small matrices: `|M|_1 |M^{-1}|_1`,
/// with the inverse's columns obtained from LU solves against unit vectors.
pub fn condition_1norm(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let norm = |a: &DMatrix<f64>| -> f64 {
        (0..a.ncols())
            .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut inv_norm: f64 = 0.0;
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        match lu.solve(&e) {
            Some(col) => {
                inv_norm = inv_norm.max(col.iter().map(|v| v.abs()).sum::<f64>());
            }
            None => return Ok(f64::INFINITY),
        }
    }
    Ok(norm(m) * inv_norm)
}

/// Fixed-point iteration for the discrete algebraic Riccati equation
/// `P = A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q`,
/// run until the update is below 1e-12 in max-abs terms.
/// Returns the stabilizing state-feedback gain `K = (R + B^T P B)^{-1} B^T P A`.
pub fn dare_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    const TOL: f64 = 1e-12;
    const CAP: usize = 1_000_000;
    let mut p = q.clone();
    for _ in 0..CAP {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gain_part = gram.clone().lu().solve(&(&btp * a)).ok_or_else(|| {
            OncError::Numerical("singular input-weight Gram matrix in Riccati iteration".into())
        })?;
        let p_next = a.transpose() * &p * a - a.transpose() * &p * b * &gain_part + q;
        let diff = (&p_next - &p).amax();
        if !diff.is_finite() {
            return Err(OncError::Numerical("Riccati iteration diverged".into()));
        }
        p = p_next;
        if diff < TOL {
            let btp = b.transpose() * &p;
            let gram = r + &btp * b;
            return gram.lu().solve(&(&btp * a)).ok_or_else(|| {
                OncError::Numerical("singular Gram matrix at Riccati fixed point".into())
            });
        }
    }
    Err(OncError::Numerical(
        "Riccati iteration did not reach its fixed point within the cap".into(),
    ))
}

/// Central finite-difference gradient of a scalar function, step 1e-5.
/// Used by property checks and by gradient paths for costs that do not
/// provide an analytic gradient.
pub fn fd_gradient<F: FnMut(&DVector<f64>) -> f64>(
    mut f: F,
    x: &DVector<f64>,
) -> DVector<f64> {
    const H: f64 = 1e-5;
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + H;
        let fp = f(&xp);
        xp[i] = xi - H;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * H);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_of_diag_is_max_abs() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -7.0, 0.5]));
        assert_relative_eq!(spectral_norm(&m), 7.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_radius_real_dominant() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, 0.0, 0.2]);
        assert_relative_eq!(spectral_radius(&m), 0.9, max_relative = 1e-8);
    }

    #[test]
    fn spectral_radius_complex_pair_falls_back() {
        // Rotation scaled by 0.8: eigenvalues 0.8 e^{+-i}, pure oscillation
        // for power iteration.
        let c = 1.0f64.cos();
        let s = 1.0f64.sin();
        let m = DMatrix::from_row_slice(2, 2, &[0.8 * c, -0.8 * s, 0.8 * s, 0.8 * c]);
        assert_relative_eq!(spectral_radius(&m), 0.8, max_relative = 1e-8);
    }

    #[test]
    fn spectral_radius_nilpotent_is_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&m) < 1e-8);
    }

    #[test]
    fn dlyap_solves_scalar_case() {
        // m = 0.5: P = 1/(1-0.25) = 4/3, check M^T P M - P = -1.
        let m = DMatrix::from_element(1, 1, 0.5);
        let p = dlyap_series(&m).unwrap();
        assert_relative_eq!(p[(0, 0)], 4.0 / 3.0, max_relative = 1e-12);
        let residual = m.transpose() * &p * &m - &p;
        assert_relative_eq!(residual[(0, 0)], -1.0, max_relative = 1e-10);
    }

    #[test]
    fn dlyap_residual_matrix_case() {
        let m = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.4]);
        let p = dlyap_series(&m).unwrap();
        let residual = m.transpose() * &p * &m - &p + DMatrix::identity(2, 2);
        assert!(residual.amax() < 1e-10);
    }

    #[test]
    fn sym_sqrt_squares_back() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let h = sym_sqrt(&p).unwrap();
        assert!((&h * &h - &p).amax() < 1e-12);
    }

    #[test]
    fn condition_of_identity_is_one() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(condition_1norm(&m).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn condition_detects_singularity() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(condition_1norm(&m).unwrap() > 1e12);
    }

    #[test]
    fn dare_matches_hand_solved_scalar_lqr() {
        // a=1, b=1, q=1, r=1: P solves P = P - P^2/(1+P) + 1,
        // i.e. P^2 - P - 1 = 0 => P = golden ratio, K = P/(1+P).
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        let k = dare_gain(&a, &b, &q, &r).unwrap();
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert_relative_eq!(k[(0, 0)], phi / (1.0 + phi), max_relative = 1e-9);
    }

    #[test]
    fn fd_gradient_matches_quadratic() {
        let f = |x: &DVector<f64>| x[0] * x[0] + 3.0 * x[0] * x[1];
        let x = DVector::from_vec(vec![1.5, -2.0]);
        let g = fd_gradient(f, &x);
        assert_relative_eq!(g[0], 2.0 * 1.5 - 6.0, max_relative = 1e-7);
        assert_relative_eq!(g[1], 4.5, max_relative = 1e-7);
    }
}
