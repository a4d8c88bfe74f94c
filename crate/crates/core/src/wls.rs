//! Equality-constrained weighted least squares:
//!
//! ```text
//! X = argmin_{A(X) = y} <X, W(X)> = W^{-1} A* (A W^{-1} A*)^{-1} y
//! ```
//!
//! Two routes solve the `m x m` system `(A W^{-1} A*) lambda = y`:
//! assembling it densely and factoring it (`Gram`), or conjugate gradients
//! with operator applications only (`ConjugateGradient`).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::matrix::{inner, DenseMatrix};
use crate::measurement::MeasurementOperator;
use crate::weight::{WeightInverse, WeightState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlsMethod {
    /// Dense Gram matrix and Cholesky factorization.
    Gram,
    /// Conjugate gradients on the `m`-dimensional system.
    ConjugateGradient,
    /// `Gram` when the operator fits the materialization budget, else CG.
    Auto,
}

#[derive(Debug, Clone)]
pub struct WlsConfig {
    pub method: WlsMethod,
    /// Relative tolerance on `||(A W^{-1} A*) lambda - y|| / ||y||` for CG
    /// and on the constraint residual after refinement.
    pub tol: f64,
    /// Tolerance of inner `W^{-1}` applications, relative to `tol`.
    pub inner_tol_factor: f64,
    /// CG iteration cap; `None` means `10 m`.
    pub max_cg_iter: Option<usize>,
    /// Largest `m * n1 * n2` for which `Auto` picks the Gram route.
    pub materialize_budget: usize,
}

impl Default for WlsConfig {
    fn default() -> Self {
        WlsConfig {
            method: WlsMethod::Auto,
            tol: 1e-12,
            inner_tol_factor: 0.01,
            max_cg_iter: None,
            materialize_budget: 20_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub x: DenseMatrix,
    /// Multipliers in the (possibly reduced) measurement space of the solver.
    pub lambda: DVector<f64>,
    /// `||A(X) - y|| / ||y||`.
    pub constraint_residual: f64,
    /// Filled by [`WlsSolution::check_kernel`].
    pub kernel_orthogonality: Option<f64>,
    /// CG iterations, or refinement passes for the Gram route.
    pub iterations: usize,
    /// The Gram matrix was not numerically positive definite and a shift
    /// `1e-12 trace / m` was added.
    pub regularized: bool,
}

impl WlsSolution {
    /// `max |<W(X), Xi>| / (||W(X)|| ||Xi||)` over the given kernel directions.
    pub fn check_kernel(&mut self, ws: &WeightState, kernel: &[DenseMatrix]) -> f64 {
        let wx = ws.apply(&self.x);
        let wn = wx.norm();
        let worst = kernel
            .iter()
            .map(|xi| {
                let denom = wn * xi.norm();
                if denom == 0.0 {
                    0.0
                } else {
                    inner(&wx, xi).abs() / denom
                }
            })
            .fold(0.0, f64::max);
        self.kernel_orthogonality = Some(worst);
        worst
    }
}

/// WLS solver bound to one operator; caches the materialized operator for the
/// Gram route so repeated solves (one per IRLS iteration) reuse it.
#[derive(Debug)]
pub struct WlsSolver<'a> {
    full: &'a MeasurementOperator,
    reduced: Option<(MeasurementOperator, Vec<usize>)>,
    stack: Option<DMatrix<f64>>,
    config: WlsConfig,
}

impl<'a> WlsSolver<'a> {
    pub fn new(op: &'a MeasurementOperator, config: WlsConfig) -> Self {
        let reduced = op.independent_rows();
        let work = reduced.as_ref().map(|(r, _)| r).unwrap_or(op);
        let (n1, n2) = work.dims();
        let use_gram = match config.method {
            WlsMethod::Gram => true,
            WlsMethod::ConjugateGradient => false,
            WlsMethod::Auto => work.len() * n1 * n2 <= config.materialize_budget,
        };
        let stack = (use_gram && work.dense_matrix().is_none()).then(|| work.materialize());
        WlsSolver { full: op, reduced, stack, config }
    }

    fn work_op(&self) -> &MeasurementOperator {
        self.reduced.as_ref().map(|(r, _)| r).unwrap_or(self.full)
    }

    fn uses_gram(&self) -> bool {
        self.stack.is_some() || (self.config.method != WlsMethod::ConjugateGradient && self.work_op().dense_matrix().is_some() && {
            let (n1, n2) = self.work_op().dims();
            self.config.method == WlsMethod::Gram || self.work_op().len() * n1 * n2 <= self.config.materialize_budget
        })
    }

    fn stack(&self) -> &DMatrix<f64> {
        self.stack
            .as_ref()
            .or_else(|| self.work_op().dense_matrix())
            .expect("gram route has a materialized operator")
    }

    pub fn config(&self) -> &WlsConfig {
        &self.config
    }

    /// Solves with the weight `ws`; `warm_start` seeds CG's multipliers.
    pub fn solve(&self, y: &DVector<f64>, ws: &WeightState, warm_start: Option<&DVector<f64>>) -> Result<WlsSolution> {
        let (n1, n2) = self.full.dims();
        if y.len() != self.full.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} measurements", self.full.len()),
                found: format!("{}", y.len()),
            });
        }
        if ws.dims() != (n1, n2) {
            return Err(Error::DimensionMismatch {
                expected: format!("{n1}x{n2} weight"),
                found: format!("{:?}", ws.dims()),
            });
        }
        let y_work = match &self.reduced {
            Some((_, keep)) => DVector::from_iterator(keep.len(), keep.iter().map(|&q| y[q])),
            None => y.clone(),
        };
        let y_norm = y.norm();
        if y_norm == 0.0 {
            return Ok(WlsSolution {
                x: DMatrix::zeros(n1, n2),
                lambda: DVector::zeros(y_work.len()),
                constraint_residual: 0.0,
                kernel_orthogonality: None,
                iterations: 0,
                regularized: false,
            });
        }
        let inv = ws.inverse();
        let (x, lambda, iterations, regularized) = if self.uses_gram() {
            self.solve_gram(&y_work, &inv)?
        } else {
            let (x, lambda, it) = self.solve_cg(&y_work, ws, &inv, warm_start)?;
            (x, lambda, it, false)
        };
        let constraint_residual = (self.full.apply_unchecked(&x) - y).norm() / y_norm;
        Ok(WlsSolution { x, lambda, constraint_residual, kernel_orthogonality: None, iterations, regularized })
    }

    fn solve_gram(&self, y: &DVector<f64>, inv: &WeightInverse) -> Result<(DenseMatrix, DVector<f64>, usize, bool)> {
        let op = self.work_op();
        let (n1, n2) = op.dims();
        let stack = self.stack();
        let m = stack.nrows();
        let n = n1 * n2;

        // column q holds W^{-1}(A_q), flattened column-major
        let mut weighted = DMatrix::zeros(n, m);
        for q in 0..m {
            let a_q = DMatrix::from_iterator(n1, n2, stack.row(q).iter().copied());
            let b_q = inv.apply(&a_q);
            weighted.column_mut(q).copy_from_slice(b_q.as_slice());
        }
        let mut gram = stack * &weighted;
        gram = 0.5 * (&gram + gram.transpose());

        let (chol, regularized) = factor_gram(gram)?;
        let mut lambda = chol.solve(y);
        let mut flat = &weighted * &lambda;
        let y_norm = y.norm();
        let mut passes = 1;
        // iterative refinement of the constraint residual
        for _ in 0..3 {
            let residual = y - stack * &flat;
            if residual.norm() <= self.config.tol * y_norm {
                break;
            }
            let correction = chol.solve(&residual);
            flat += &weighted * &correction;
            lambda += correction;
            passes += 1;
        }
        Ok((DMatrix::from_column_slice(n1, n2, flat.as_slice()), lambda, passes, regularized))
    }

    fn solve_cg(
        &self,
        y: &DVector<f64>,
        ws: &WeightState,
        inv: &WeightInverse,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<(DenseMatrix, DVector<f64>, usize)> {
        let op = self.work_op();
        let inner_tol = self.config.tol * self.config.inner_tol_factor;
        let winv = |z: &DenseMatrix| refine_inverse(ws, inv, z, inner_tol);
        let system = |lam: &DVector<f64>| -> Result<DVector<f64>> { Ok(op.apply_unchecked(&winv(&op.adjoint_unchecked(lam)))) };

        let m = y.len();
        let cap = self.config.max_cg_iter.unwrap_or(10 * m);
        let y_norm = y.norm();
        let mut lambda = match warm_start {
            Some(l) if l.len() == m => l.clone(),
            _ => DVector::zeros(m),
        };
        let mut r = y - system(&lambda)?;
        let mut p = r.clone();
        let mut rr = r.norm_squared();
        let mut iterations = 0;
        while rr.sqrt() > self.config.tol * y_norm {
            if iterations == cap {
                return Err(Error::IterationLimit { iterations, residual: rr.sqrt() / y_norm });
            }
            let gp = system(&p)?;
            let curvature = p.dot(&gp);
            if curvature <= 0.0 || !curvature.is_finite() {
                return Err(Error::SingularSystem(format!(
                    "A W^-1 A* lost positive definiteness (p^T G p = {curvature:.3e})"
                )));
            }
            let alpha = rr / curvature;
            lambda.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &gp, 1.0);
            let rr_next = r.norm_squared();
            p = &r + (rr_next / rr) * p;
            rr = rr_next;
            iterations += 1;
        }
        let x = winv(&op.adjoint_unchecked(&lambda));
        Ok((x, lambda, iterations))
    }
}

/// Structured inverse polished by a few steps of iterative refinement. The
/// structured inverse is a direct solve, so refinement stops as soon as it no
/// longer reduces the residual; for badly conditioned weights `tol` may be
/// unattainable in floating point and the best iterate is returned.
fn refine_inverse(ws: &WeightState, inv: &WeightInverse, z: &DenseMatrix, tol: f64) -> DenseMatrix {
    let mut x = inv.apply(z);
    let target = tol * z.norm();
    let mut r = z - ws.apply(&x);
    let mut r_norm = r.norm();
    for _ in 0..3 {
        if r_norm <= target {
            break;
        }
        let candidate = &x + inv.apply(&r);
        let r_next = z - ws.apply(&candidate);
        let next_norm = r_next.norm();
        if next_norm >= r_norm {
            break;
        }
        x = candidate;
        r = r_next;
        r_norm = next_norm;
    }
    x
}

fn factor_gram(gram: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    let m = gram.nrows();
    if let Some(chol) = Cholesky::new(gram.clone()) {
        return Ok((chol, false));
    }
    let shift = 1e-12 * gram.trace() / m as f64;
    if shift.is_nan() || shift <= 0.0 {
        return Err(Error::SingularSystem("Gram matrix has nonpositive trace".into()));
    }
    let shifted = gram + DMatrix::identity(m, m) * shift;
    Cholesky::new(shifted)
        .map(|c| (c, true))
        .ok_or_else(|| Error::SingularSystem("Gram matrix is not positive definite after regularization".into()))
}

/// One-shot WLS solve; see [`WlsSolver`].
pub fn solve_wls(op: &MeasurementOperator, y: &DVector<f64>, ws: &WeightState, config: &WlsConfig) -> Result<WlsSolution> {
    WlsSolver::new(op, config.clone()).solve(y, ws, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{fourier_rank_one, gaussian_dense, gaussian_rank_one};
    use crate::rng::{normal_matrix, rng_from_seed};

    fn min_norm(op: &MeasurementOperator, y: &DVector<f64>) -> DenseMatrix {
        let a = op.materialize();
        let aat = &a * a.transpose();
        let lam = aat.lu().solve(y).unwrap();
        let (n1, n2) = op.dims();
        DMatrix::from_column_slice(n1, n2, (a.transpose() * lam).as_slice())
    }

    #[test]
    fn identity_weight_gives_min_norm_interpolant() {
        let op = gaussian_dense(6, 5, 12, 3).unwrap();
        let x0 = normal_matrix(&mut rng_from_seed(1), 6, 5);
        let y = op.apply(&x0).unwrap();
        let ws = WeightState::identity(6, 5);
        let expected = min_norm(&op, &y);
        for method in [WlsMethod::Gram, WlsMethod::ConjugateGradient] {
            let cfg = WlsConfig { method, ..WlsConfig::default() };
            let sol = solve_wls(&op, &y, &ws, &cfg).unwrap();
            assert!((&sol.x - &expected).norm() < 1e-10 * expected.norm(), "{method:?}");
            assert!(sol.constraint_residual < 1e-12);
        }
    }

    #[test]
    fn routes_agree_on_weighted_problem() {
        let mut rng = rng_from_seed(4);
        for op in [
            gaussian_dense(7, 4, 15, 2).unwrap(),
            gaussian_rank_one(7, 4, 15, 2).unwrap(),
            fourier_rank_one(7, 4, 15, 2).unwrap(),
        ] {
            let x0 = normal_matrix(&mut rng, 7, 4);
            let y = op.apply(&x0).unwrap();
            let ws = WeightState::build(&normal_matrix(&mut rng, 7, 4), 0.5, 0.9).unwrap();
            let gram = solve_wls(&op, &y, &ws, &WlsConfig { method: WlsMethod::Gram, ..Default::default() }).unwrap();
            let cg =
                solve_wls(&op, &y, &ws, &WlsConfig { method: WlsMethod::ConjugateGradient, ..Default::default() })
                    .unwrap();
            assert!((&gram.x - &cg.x).norm() < 1e-9 * gram.x.norm(), "{:?}", op.kind());
            assert!(gram.constraint_residual < 1e-10);
            assert!(!gram.regularized);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let op = gaussian_dense(3, 3, 4, 1).unwrap();
        let sol = solve_wls(&op, &DVector::zeros(4), &WeightState::identity(3, 3), &WlsConfig::default()).unwrap();
        assert_eq!(sol.x, DMatrix::zeros(3, 3));
    }

    #[test]
    fn rejects_mismatched_data() {
        let op = gaussian_dense(3, 3, 4, 1).unwrap();
        let err = solve_wls(&op, &DVector::zeros(5), &WeightState::identity(3, 3), &WlsConfig::default());
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cg_cap_is_reported() {
        let op = gaussian_dense(6, 5, 20, 3).unwrap();
        let y = op.apply(&normal_matrix(&mut rng_from_seed(2), 6, 5)).unwrap();
        let ws = WeightState::build(&normal_matrix(&mut rng_from_seed(3), 6, 5), 1e-3, 1e-3).unwrap();
        let cfg = WlsConfig { method: WlsMethod::ConjugateGradient, max_cg_iter: Some(2), ..Default::default() };
        assert!(matches!(solve_wls(&op, &y, &ws, &cfg), Err(Error::IterationLimit { iterations: 2, .. })));
    }
}
