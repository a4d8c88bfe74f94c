//! Iterative hard thresholding onto rank-`r`, `s`-row-sparse matrices:
//!
//! ```text
//! X <- T_r(H_s(X + mu A*(y - A(X))))
//! ```
//!
//! started from `T_r(H_s(A*(y)))`. This is a plain projected-gradient
//! baseline; it is not SPF or RiemAdaIHT.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::{hard_threshold_rows, inner, project_tangent, top_rows, truncate_rank, DenseMatrix, SvdFactors};
use crate::measurement::MeasurementOperator;
use crate::trace::{IterateTrace, RecoveryResult, Termination, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Exact line search of `||A(X + mu G) - y||^2` along the gradient
    /// projected onto the tangent space at the current iterate.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct IhtConfig {
    pub r: usize,
    pub s: usize,
    pub step: StepSize,
    pub max_iter: usize,
    /// Stop once `||X_{k+1} - X_k||_F / ||X_{k+1}||_F` falls below this.
    pub tol: f64,
    /// Abort when the residual exceeds this multiple of the initial one.
    pub divergence_factor: f64,
    pub record_timing: bool,
}

impl IhtConfig {
    pub fn new(r: usize, s: usize) -> Self {
        IhtConfig {
            r,
            s,
            step: StepSize::Adaptive,
            max_iter: 2000,
            tol: 1e-10,
            divergence_factor: 1e3,
            record_timing: false,
        }
    }
}

/// `T_r(H_s(X))`. Rows removed by `H_s` are zero in exact arithmetic after
/// `T_r` too; they are reset to clear rounding.
fn project(x: &DenseMatrix, r: usize, s: usize) -> DenseMatrix {
    let rows = top_rows(x, s);
    let mut out = truncate_rank(&hard_threshold_rows(x, s), r);
    let mut keep = vec![false; x.nrows()];
    rows.iter().for_each(|&i| keep[i] = true);
    for (i, k) in keep.into_iter().enumerate() {
        if !k {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

fn line_search(op: &MeasurementOperator, x: &DenseMatrix, g: &DenseMatrix, r: usize, s: usize) -> Result<f64> {
    let svd = SvdFactors::compute(x).truncated(r);
    let support = top_rows(x, s);
    let pg = project_tangent(g, &svd.u, &svd.v, Some(&support))?;
    let num = inner(&pg, &pg);
    let den = op.apply_unchecked(&pg).norm_squared();
    Ok(if den > 0.0 && num > 0.0 { num / den } else { 1.0 / op.mean_gain().max(f64::MIN_POSITIVE) })
}

pub fn run_iht(
    op: &MeasurementOperator,
    y: &DVector<f64>,
    config: &IhtConfig,
    ground_truth: Option<&DenseMatrix>,
) -> Result<RecoveryResult> {
    let (n1, n2) = op.dims();
    if config.r == 0 || config.r > n1.min(n2) || config.s == 0 || config.s > n1 {
        return Err(Error::InvalidParameter(format!("model orders r={}, s={} out of range", config.r, config.s)));
    }
    if let StepSize::Fixed(mu) = config.step {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {mu}")));
        }
    }
    if y.len() != op.len() {
        return Err(Error::DimensionMismatch { expected: format!("{} measurements", op.len()), found: y.len().to_string() });
    }
    let gt_norm = ground_truth.map(|g| g.norm());
    let start = Instant::now();
    let (r, s) = (config.r, config.s);

    let mut x = project(&op.adjoint_unchecked(y), r, s);
    let ax = op.apply_unchecked(&x);
    let ax2 = ax.norm_squared();
    if ax2 > 0.0 {
        x *= ax.dot(y) / ax2;
    }
    let mut residual = y - op.apply_unchecked(&x);
    let initial = residual.norm().max(f64::MIN_POSITIVE);
    let mut trace = IterateTrace::default();

    for k in 1..=config.max_iter {
        let g = op.adjoint_unchecked(&residual);
        let mu = match config.step {
            StepSize::Fixed(mu) => mu,
            StepSize::Adaptive => line_search(op, &x, &g, r, s)?,
        };
        let x_next = project(&(&x + mu * g), r, s);
        residual = y - op.apply_unchecked(&x_next);
        let next_norm = x_next.norm();
        let rel_change = if next_norm > 0.0 { (&x_next - &x).norm() / next_norm } else { 0.0 };
        let res_norm = residual.norm();
        trace.push(TraceRecord {
            k,
            epsilon: f64::NAN,
            delta: f64::NAN,
            r_k: r,
            s_k: s,
            rel_change,
            f_lr: None,
            f_sp: None,
            f: None,
            rel_error: ground_truth.zip(gt_norm).map(|(gt, gn)| (&x_next - gt).norm() / gn),
            wall_time_ms: config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
            epsilon_floored: false,
            delta_floored: false,
        });
        x = x_next;

        let termination = if !res_norm.is_finite() || res_norm > config.divergence_factor * initial {
            Some(Termination::Diverged)
        } else if rel_change < config.tol {
            Some(Termination::Tolerance)
        } else if k == config.max_iter {
            Some(Termination::MaxIter)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(RecoveryResult { x_final: x, iterations: k, termination, trace });
        }
    }
    Err(Error::InvalidParameter("max_iter must be at least 1".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{generate_ground_truth, row_support, SvdFactors};
    use crate::measurement::gaussian_dense;

    #[test]
    fn determined_system_converges() {
        let gt = generate_ground_truth(6, 5, 1, 2, 3).unwrap();
        // orthogonal measurement matrix
        let q = gaussian_dense(6, 5, 30, 4).unwrap().materialize().qr().q();
        let op = MeasurementOperator::from_dense(q, 6, 5).unwrap();
        let y = op.apply(&gt.x).unwrap();
        let res = run_iht(&op, &y, &IhtConfig::new(1, 2), Some(&gt.x)).unwrap();
        assert!(res.final_error().unwrap() < 1e-8, "{:?} {:?}", res.termination, res.final_error());
    }

    #[test]
    fn iterates_stay_on_the_model_set() {
        let gt = generate_ground_truth(16, 6, 2, 5, 8).unwrap();
        let op = gaussian_dense(16, 6, 40, 9).unwrap();
        let y = op.apply(&gt.x).unwrap();
        let cfg = IhtConfig { max_iter: 15, ..IhtConfig::new(2, 5) };
        let res = run_iht(&op, &y, &cfg, None).unwrap();
        assert!(SvdFactors::compute(&res.x_final).numeric_rank(1e-12) <= 2);
        assert!(row_support(&res.x_final, 0.0).len() <= 5);
    }

    #[test]
    fn zero_step_is_stationary() {
        let gt = generate_ground_truth(8, 4, 1, 3, 1).unwrap();
        let op = gaussian_dense(8, 4, 12, 2).unwrap();
        let y = op.apply(&gt.x).unwrap();
        let cfg = IhtConfig { step: StepSize::Fixed(0.0), ..IhtConfig::new(1, 3) };
        let res = run_iht(&op, &y, &cfg, None).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.termination, Termination::Tolerance);
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let gt = generate_ground_truth(10, 5, 2, 4, 21).unwrap();
        let op = gaussian_dense(10, 5, 25, 22).unwrap();
        let y = op.apply(&gt.x).unwrap();
        // the gradient vanishes at the truth, so any step leaves it unchanged
        let next = project(&(&gt.x + 0.7 * op.adjoint(&(&y - op.apply(&gt.x).unwrap())).unwrap()), 2, 4);
        assert!((&next - &gt.x).norm() < 1e-12);
    }
}
