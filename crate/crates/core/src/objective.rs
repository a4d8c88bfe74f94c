//! Smoothed log surrogates for rank and row sparsity, their gradients and the
//! quadratic models that majorize them.
//!
//! `f_tau(t) = t^2 / 2` for `|t| <= tau` and `tau^2 / 2 * ln(e t^2 / tau^2)`
//! otherwise. The rank term sums `f_eps` over singular values, the sparsity
//! term sums `f_delta` over row norms. An infinite `tau` selects the quadratic
//! branch everywhere.

use crate::error::{Error, Result};
use crate::matrix::{inner, row_norms, DenseMatrix, SvdFactors};
use crate::weight::WeightState;

/// Singular values below this fraction of `sigma_1` are treated as zero.
pub const SPECTRUM_CLAMP: f64 = 1e-14;

/// Spectral (`epsilon`) and row (`delta`) smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check_tau(epsilon)?;
        check_tau(delta)?;
        Ok(SmoothingParams { epsilon, delta })
    }

    /// `epsilon = delta = inf`.
    pub fn quadratic() -> Self {
        SmoothingParams { epsilon: f64::INFINITY, delta: f64::INFINITY }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    // NaN fails the comparison as well
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("smoothing parameter must be positive, got {tau}")))
    }
}

#[inline]
pub(crate) fn f_tau_unchecked(t: f64, tau: f64) -> f64 {
    if t.abs() <= tau {
        0.5 * t * t
    } else {
        let ratio = t / tau;
        0.5 * tau * tau * (1.0 + (ratio * ratio).ln())
    }
}

#[inline]
pub(crate) fn f_tau_prime_unchecked(t: f64, tau: f64) -> f64 {
    if t.abs() <= tau {
        t
    } else {
        tau * tau / t
    }
}

pub fn f_tau(t: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(f_tau_unchecked(t, tau))
}

/// `tau^2 t / max(t^2, tau^2)`.
pub fn f_tau_prime(t: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(f_tau_prime_unchecked(t, tau))
}

pub(crate) fn clamp_spectrum(sigma: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let cut = sigma.first().copied().unwrap_or(0.0) * SPECTRUM_CLAMP;
    sigma.iter().map(move |&s| if s < cut { 0.0 } else { s })
}

pub(crate) fn f_lr_from_spectrum(sigma: &[f64], epsilon: f64) -> f64 {
    clamp_spectrum(sigma).map(|s| f_tau_unchecked(s, epsilon)).sum()
}

pub(crate) fn f_sp_from_norms(norms: &[f64], delta: f64) -> f64 {
    norms.iter().map(|&n| f_tau_unchecked(n, delta)).sum()
}

/// Rank surrogate `sum_i f_eps(sigma_i(X))`.
pub fn f_lr(x: &DenseMatrix, epsilon: f64) -> Result<f64> {
    check_tau(epsilon)?;
    let svd = SvdFactors::compute(x);
    Ok(f_lr_from_spectrum(svd.sigma.as_slice(), epsilon))
}

/// Row-sparsity surrogate `sum_i f_delta(||X_{i,:}||_2)`.
pub fn f_sp(x: &DenseMatrix, delta: f64) -> Result<f64> {
    check_tau(delta)?;
    Ok(f_sp_from_norms(&row_norms(x), delta))
}

/// Both parts of the surrogate at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub lr: f64,
    pub sp: f64,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.lr + self.sp
    }
}

pub fn objective_parts(x: &DenseMatrix, params: SmoothingParams) -> ObjectiveValue {
    let svd = SvdFactors::compute(x);
    ObjectiveValue {
        lr: f_lr_from_spectrum(svd.sigma.as_slice(), params.epsilon),
        sp: f_sp_from_norms(&row_norms(x), params.delta),
    }
}

/// `F_{eps,delta}(X) = F_lr + F_sp`.
pub fn objective(x: &DenseMatrix, params: SmoothingParams) -> f64 {
    objective_parts(x, params).total()
}

/// Row `i` is `delta^2 X_i / max(||X_i||^2, delta^2)`.
pub fn grad_f_sp(x: &DenseMatrix, delta: f64) -> Result<DenseMatrix> {
    check_tau(delta)?;
    let mut g = x.clone();
    for (i, n) in row_norms(x).into_iter().enumerate() {
        if n > delta {
            g.row_mut(i).scale_mut((delta / n) * (delta / n));
        }
    }
    Ok(g)
}

/// `U diag(sigma_i min(eps^2 / sigma_i^2, 1)) V^T` from the full SVD.
pub fn grad_f_lr(x: &DenseMatrix, epsilon: f64) -> Result<DenseMatrix> {
    check_tau(epsilon)?;
    let mut svd = SvdFactors::compute(x);
    let sigma: Vec<f64> = clamp_spectrum(svd.sigma.as_slice()).collect();
    for (slot, s) in svd.sigma.iter_mut().zip(sigma) {
        *slot = f_tau_prime_unchecked(s, epsilon);
    }
    Ok(svd.reconstruct())
}

/// `Q_lr(Z | X) = F_lr(X) + <grad F_lr(X), Z - X> + 1/2 <Z - X, W_lr (Z - X)>`
/// with the rank weight built from `X` at `epsilon`.
pub fn q_lr(z: &DenseMatrix, x: &DenseMatrix, epsilon: f64) -> Result<f64> {
    check_tau(epsilon)?;
    let ws = WeightState::build(x, epsilon, f64::INFINITY)?;
    let d = z - x;
    Ok(f_lr(x, epsilon)? + inner(&grad_f_lr(x, epsilon)?, &d) + 0.5 * inner(&d, &ws.apply_lr(&d)))
}

/// `Q_sp(Z | X)`, the row-sparsity analogue of [`q_lr`].
pub fn q_sp(z: &DenseMatrix, x: &DenseMatrix, delta: f64) -> Result<f64> {
    check_tau(delta)?;
    let ws = WeightState::build(x, f64::INFINITY, delta)?;
    let d = z - x;
    Ok(f_sp(x, delta)? + inner(&grad_f_sp(x, delta)?, &d) + 0.5 * inner(&d, &ws.apply_sp(&d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn f_tau_examples() {
        assert_eq!(f_tau(0.5, 1.0).unwrap(), 0.125);
        assert_eq!(f_tau(1.0, 1.0).unwrap(), 0.5);
        assert!((f_tau(1.0 + 1e-12, 1.0).unwrap() - 0.5).abs() < 1e-11);
        let expected = 0.5 * (1.0 + 4f64.ln());
        assert!((f_tau(2.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.19315).abs() < 1e-5);
        assert_eq!(f_tau(-2.0, 1.0).unwrap(), f_tau(2.0, 1.0).unwrap());
        assert_eq!(f_tau(3.0, f64::INFINITY).unwrap(), 4.5);
        assert!(f_tau(1.0, 0.0).is_err());
        assert!(f_tau(1.0, -1.0).is_err());
        assert!(f_tau_prime(1.0, f64::NAN).is_err());
    }

    #[test]
    fn f_tau_prime_regimes() {
        assert_eq!(f_tau_prime(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(f_tau_prime(1.5, 2.0).unwrap(), 1.5);
        assert_eq!(f_tau_prime(4.0, 2.0).unwrap(), 1.0);
        assert_eq!(f_tau_prime(-4.0, 2.0).unwrap(), -1.0);
    }

    #[test]
    fn objective_at_zero_and_in_quadratic_regime() {
        let z = DMatrix::zeros(3, 4);
        let p = SmoothingParams::new(0.1, 0.1).unwrap();
        assert_eq!(objective(&z, p), 0.0);
        assert_eq!(f_lr(&z, 0.1).unwrap(), 0.0);
        assert_eq!(f_sp(&z, 0.1).unwrap(), 0.0);

        let mut x = DMatrix::zeros(3, 3);
        x.set_diagonal(&DVector::from_vec(vec![0.5, 0.3, 0.1]));
        let p = SmoothingParams::new(1.0, 1.0).unwrap();
        assert!((objective(&x, p) - x.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn gradients_in_quadratic_regime_are_identity() {
        let x = DMatrix::from_fn(3, 2, |i, j| 0.1 * (i as f64 - j as f64));
        assert!((grad_f_sp(&x, 10.0).unwrap() - &x).norm() < 1e-15);
        assert!((grad_f_lr(&x, 10.0).unwrap() - &x).norm() < 1e-14);
        let z = DMatrix::zeros(3, 2);
        assert_eq!(grad_f_sp(&z, 1.0).unwrap(), z);
        assert!(grad_f_lr(&z, 1.0).unwrap().norm() < 1e-300);
    }

    #[test]
    fn quadratic_models_anchor_at_x() {
        let x = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let q = q_lr(&x, &x, 0.2).unwrap() + q_sp(&x, &x, 0.3).unwrap();
        let f = objective(&x, SmoothingParams::new(0.2, 0.3).unwrap());
        assert!((q - f).abs() < 1e-14 * f.abs().max(1.0));
    }

    #[test]
    fn params_validation() {
        assert!(SmoothingParams::new(0.0, 1.0).is_err());
        assert!(SmoothingParams::new(1.0, f64::NAN).is_err());
        assert!(SmoothingParams::new(f64::INFINITY, f64::INFINITY).is_ok());
    }
}
