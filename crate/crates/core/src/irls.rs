//! The IRLS outer loop: weighted least squares step, smoothing update,
//! weight rebuild.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::{row_norms, rows_by_norm, DenseMatrix, SvdFactors};
use crate::measurement::MeasurementOperator;
use crate::objective::{clamp_spectrum, f_lr_from_spectrum, f_sp_from_norms, objective, q_lr, q_sp, SmoothingParams};
use crate::trace::{IterateTrace, RecoveryResult, Termination, TraceRecord};
use crate::weight::WeightState;
use crate::wls::{WlsConfig, WlsSolver};

#[derive(Debug, Clone)]
pub struct IrlsConfig {
    pub r_tilde: usize,
    pub s_tilde: usize,
    pub max_iter: usize,
    /// Stop once `||X^(k) - X^(k-1)||_F / ||X^(k)||_F` falls below this.
    pub tol: f64,
    pub wls: WlsConfig,
    /// Floor for `epsilon`, relative to `sigma_1` of the first iterate.
    pub eps_floor: f64,
    /// Floor for `delta`, relative to the largest row norm of the first iterate.
    pub delta_floor: f64,
    /// Record `F_lr`, `F_sp` and `F` at the current smoothing parameters.
    pub trace_objective: bool,
    /// Record wall-clock time per iteration. Off by default so traces are
    /// reproducible byte for byte.
    pub record_timing: bool,
    /// Seed the CG multipliers with those of the previous iteration.
    pub warm_start: bool,
}

impl IrlsConfig {
    pub fn new(r_tilde: usize, s_tilde: usize) -> Self {
        IrlsConfig {
            r_tilde,
            s_tilde,
            max_iter: 250,
            tol: 1e-10,
            wls: WlsConfig::default(),
            eps_floor: 1e-14,
            delta_floor: 1e-14,
            trace_objective: true,
            record_timing: false,
            warm_start: false,
        }
    }

    fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        if self.r_tilde == 0 || self.r_tilde > n1.min(n2) {
            return Err(Error::InvalidParameter(format!(
                "rank estimate {} outside 1..={}",
                self.r_tilde,
                n1.min(n2)
            )));
        }
        if self.s_tilde == 0 || self.s_tilde > n1 {
            return Err(Error::InvalidParameter(format!("sparsity estimate {} outside 1..={n1}", self.s_tilde)));
        }
        if !(self.eps_floor > 0.0 && self.delta_floor > 0.0) {
            return Err(Error::InvalidParameter("smoothing floors must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingUpdate {
    pub params: SmoothingParams,
    pub epsilon_floored: bool,
    pub delta_floored: bool,
}

fn next_param(prev: f64, candidate: f64, floor: f64) -> (f64, bool) {
    let value = prev.min(candidate);
    if value <= floor {
        (floor, true)
    } else {
        (value, false)
    }
}

pub(crate) fn update_from_stats(
    sigma: &[f64],
    norms: &[f64],
    r_tilde: usize,
    s_tilde: usize,
    prev: SmoothingParams,
    floors: SmoothingParams,
) -> SmoothingUpdate {
    let spectrum: Vec<f64> = clamp_spectrum(sigma).collect();
    let sigma_next = spectrum.get(r_tilde).copied().unwrap_or(0.0);
    let order = rows_by_norm(norms);
    let rho_next = order.get(s_tilde).map_or(0.0, |&i| norms[i]);
    let (epsilon, epsilon_floored) = next_param(prev.epsilon, sigma_next, floors.epsilon);
    let (delta, delta_floored) = next_param(prev.delta, rho_next, floors.delta);
    SmoothingUpdate { params: SmoothingParams { epsilon, delta }, epsilon_floored, delta_floored }
}

/// `epsilon_k = min(epsilon_{k-1}, sigma_{r~+1}(X))` and
/// `delta_k = min(delta_{k-1}, rho_{s~+1}(X))`, each clamped below at its
/// (absolute) floor. The spectral index is the rank estimate, not `s~`.
pub fn update_smoothing(
    x: &DenseMatrix,
    r_tilde: usize,
    s_tilde: usize,
    prev: SmoothingParams,
    floors: SmoothingParams,
) -> SmoothingUpdate {
    let svd = SvdFactors::compute(x);
    update_from_stats(svd.sigma.as_slice(), &row_norms(x), r_tilde, s_tilde, prev, floors)
}

fn at(iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtIteration { iteration, source: Box::new(e) }
}

/// Runs IRLS from `W = Id`, `epsilon = delta = inf`. With `ground_truth` the
/// trace records relative Frobenius errors.
pub fn run_irls(
    op: &MeasurementOperator,
    y: &DVector<f64>,
    config: &IrlsConfig,
    ground_truth: Option<&DenseMatrix>,
) -> Result<RecoveryResult> {
    let (n1, n2) = op.dims();
    config.validate(n1, n2)?;
    if y.len() != op.len() {
        return Err(Error::DimensionMismatch { expected: format!("{} measurements", op.len()), found: y.len().to_string() });
    }
    if let Some(gt) = ground_truth {
        if gt.shape() != (n1, n2) {
            return Err(Error::DimensionMismatch { expected: format!("{n1}x{n2}"), found: format!("{:?}", gt.shape()) });
        }
    }
    let gt_norm = ground_truth.map(|g| g.norm());
    let start = Instant::now();
    let solver = WlsSolver::new(op, config.wls.clone());

    let mut ws = WeightState::identity(n1, n2);
    let mut params = SmoothingParams::quadratic();
    let mut floors: Option<SmoothingParams> = None;
    let mut x_prev = DenseMatrix::zeros(n1, n2);
    let mut lambda: Option<DVector<f64>> = None;
    let mut trace = IterateTrace::default();

    for k in 1..=config.max_iter {
        let warm = if config.warm_start { lambda.as_ref() } else { None };
        let sol = solver.solve(y, &ws, warm).map_err(at(k))?;
        let x = sol.x;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(at(k)(Error::SingularSystem("non-finite iterate".into())));
        }
        lambda = Some(sol.lambda);

        let svd = SvdFactors::compute(&x);
        let norms = row_norms(&x);
        let floors = *floors.get_or_insert_with(|| {
            let sigma1 = svd.sigma.get(0).copied().unwrap_or(0.0);
            let row_max = norms.iter().copied().fold(0.0, f64::max);
            SmoothingParams {
                epsilon: (config.eps_floor * sigma1).max(f64::MIN_POSITIVE),
                delta: (config.delta_floor * row_max).max(f64::MIN_POSITIVE),
            }
        });
        let update = update_from_stats(svd.sigma.as_slice(), &norms, config.r_tilde, config.s_tilde, params, floors);
        params = update.params;

        let x_norm = x.norm();
        let rel_change = if x_norm > 0.0 { (&x - &x_prev).norm() / x_norm } else { 0.0 };
        let (f_lr, f_sp) = if config.trace_objective {
            (
                Some(f_lr_from_spectrum(svd.sigma.as_slice(), params.epsilon)),
                Some(f_sp_from_norms(&norms, params.delta)),
            )
        } else {
            (None, None)
        };
        let rel_error = ground_truth.zip(gt_norm).map(|(g, gn)| (&x - g).norm() / gn);

        ws = WeightState::from_parts(&svd, norms, params.epsilon, params.delta);
        trace.push(TraceRecord {
            k,
            epsilon: params.epsilon,
            delta: params.delta,
            r_k: ws.r_k,
            s_k: ws.s_k,
            rel_change,
            f_lr,
            f_sp,
            f: f_lr.zip(f_sp).map(|(a, b)| a + b),
            rel_error,
            wall_time_ms: config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
            epsilon_floored: update.epsilon_floored,
            delta_floored: update.delta_floored,
        });

        let termination = if rel_change < config.tol {
            Some(Termination::Tolerance)
        } else if update.epsilon_floored && update.delta_floored {
            Some(Termination::SmoothingFloor)
        } else if k == config.max_iter {
            Some(Termination::MaxIter)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(RecoveryResult { x_final: x, iterations: k, termination, trace });
        }
        x_prev = x;
    }
    unreachable!("loop returns at max_iter")
}

/// `F(X_next) <= Q(X_next | X_prev) <= F(X_prev)` at fixed smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmReport {
    pub f_next: f64,
    pub q_next: f64,
    pub f_prev: f64,
}

impl MmReport {
    /// `Q - F(X_next)`; nonnegative when the model majorizes.
    pub fn majorization_slack(&self) -> f64 {
        self.q_next - self.f_next
    }

    /// `F(X_prev) - Q`; nonnegative when the step decreases the model.
    pub fn descent_slack(&self) -> f64 {
        self.f_prev - self.q_next
    }

    /// Both slacks are at least `-tol (1 + |Q|)`.
    pub fn holds(&self, tol: f64) -> bool {
        let bound = -tol * (1.0 + self.q_next.abs());
        self.majorization_slack() >= bound && self.descent_slack() >= bound
    }
}

pub fn check_mm_step(x_prev: &DenseMatrix, x_next: &DenseMatrix, params: SmoothingParams) -> Result<MmReport> {
    SmoothingParams::new(params.epsilon, params.delta)?;
    if x_prev.shape() != x_next.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", x_prev.shape()),
            found: format!("{:?}", x_next.shape()),
        });
    }
    Ok(MmReport {
        f_next: objective(x_next, params),
        q_next: q_lr(x_next, x_prev, params.epsilon)? + q_sp(x_next, x_prev, params.delta)?,
        f_prev: objective(x_prev, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::generate_ground_truth;
    use crate::measurement::gaussian_dense;
    use crate::rng::{normal_matrix, rng_from_seed};
    use nalgebra::DMatrix;

    fn floors() -> SmoothingParams {
        SmoothingParams { epsilon: 1e-14, delta: 1e-14 }
    }

    #[test]
    fn exact_rank_hits_the_floor() {
        let mut x = DMatrix::zeros(4, 4);
        x[(0, 0)] = 2.0;
        x[(1, 1)] = 1.0;
        let u = update_smoothing(&x, 2, 4, SmoothingParams::quadratic(), floors());
        assert_eq!(u.params.epsilon, 1e-14);
        assert!(u.epsilon_floored);
        // s~ = n1: no (s~+1)-th row
        assert!(u.delta_floored);
    }

    #[test]
    fn first_finite_update() {
        let mut x = DMatrix::zeros(3, 3);
        x[(0, 0)] = 1.0;
        x[(1, 1)] = 0.3;
        x[(2, 2)] = 0.1;
        let u = update_smoothing(&x, 1, 1, SmoothingParams::quadratic(), floors());
        assert!((u.params.epsilon - 0.3).abs() < 1e-15);
        assert!((u.params.delta - 0.3).abs() < 1e-15);
        assert!(!u.epsilon_floored && !u.delta_floored);
        let prev = SmoothingParams { epsilon: 0.2, delta: 0.5 };
        let u = update_smoothing(&x, 1, 1, prev, floors());
        assert_eq!(u.params.epsilon, 0.2);
        assert!((u.params.delta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mm_report_at_fixed_point() {
        let x = normal_matrix(&mut rng_from_seed(5), 5, 4);
        let r = check_mm_step(&x, &x, SmoothingParams::new(0.3, 0.4).unwrap()).unwrap();
        assert!((r.f_next - r.q_next).abs() < 1e-13);
        assert!((r.f_prev - r.q_next).abs() < 1e-13);
        assert!(r.holds(1e-12));
    }

    #[test]
    fn recovers_a_small_instance() {
        let gt = generate_ground_truth(20, 8, 1, 4, 11).unwrap();
        let op = gaussian_dense(20, 8, 60, 12).unwrap();
        let y = op.apply(&gt.x).unwrap();
        let res = run_irls(&op, &y, &IrlsConfig::new(1, 4), Some(&gt.x)).unwrap();
        assert!(res.final_error().unwrap() < 1e-8, "{:?}", res.trace.errors());
        assert!(res.trace.max_objective_increase() <= 1e-9);
        let eps: Vec<f64> = res.trace.records.iter().map(|r| r.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_orders() {
        let op = gaussian_dense(5, 4, 10, 1).unwrap();
        let y = DVector::zeros(10);
        assert!(run_irls(&op, &y, &IrlsConfig::new(0, 2), None).is_err());
        assert!(run_irls(&op, &y, &IrlsConfig::new(5, 2), None).is_err());
        assert!(run_irls(&op, &y, &IrlsConfig::new(1, 6), None).is_err());
    }
}
