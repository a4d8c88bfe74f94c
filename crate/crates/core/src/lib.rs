//! Iteratively reweighted least squares (IRLS) for recovering matrices that
//! are simultaneously low-rank and row-sparse from linear measurements.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`]: dense containers, ground truths, `H_s` / `T_r` projections
//! - [`measurement`]: Gaussian, rank-one and Fourier measurement operators
//! - [`objective`]: smoothed log surrogates, gradients, quadratic models
//! - [`weight`]: the combined low-rank / row-sparse weight operator
//! - [`wls`]: the equality-constrained weighted least squares step
//! - [`irls`]: the outer IRLS loop with smoothing updates and traces
//! - [`iht`]: an iterative hard thresholding baseline
//! - [`trace`]: iterate traces, CSV output and convergence-rate fits

pub mod error;
pub mod iht;
pub mod irls;
pub mod matrix;
pub mod measurement;
pub mod objective;
pub mod rng;
pub mod trace;
pub mod weight;
pub mod wls;

pub use error::{Error, Result};
pub use iht::{run_iht, IhtConfig, StepSize};
pub use irls::{check_mm_step, run_irls, update_smoothing, IrlsConfig, MmReport, SmoothingUpdate};
pub use matrix::{
    generate_ground_truth, hard_threshold_rows, project_tangent, rel_frobenius_error, rho, truncate_rank,
    DenseMatrix, GroundTruth, SvdFactors,
};
pub use measurement::{rip_probe, EnsembleDescriptor, MeasurementKind, MeasurementOperator};
pub use objective::{ObjectiveValue, SmoothingParams};
pub use trace::{fit_quadratic_rate, IterateTrace, RecoveryResult, Termination, TraceRecord};
pub use weight::{WeightInverse, WeightState};
pub use wls::{solve_wls, WlsConfig, WlsMethod, WlsSolution, WlsSolver};
