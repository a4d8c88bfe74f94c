//! Experiment drivers. Every trial derives its own seeds from
//! `(base_seed, s, m, trial)`, so results do not depend on scheduling.

use std::time::Instant;

use anyhow::{Context, Result};
use irls_core::rng::derive_seed;
use irls_core::trace::QuadraticFit;
use irls_core::{
    fit_quadratic_rate, generate_ground_truth, rip_probe, run_iht, run_irls, EnsembleDescriptor, IhtConfig,
    IrlsConfig, MeasurementOperator, RecoveryResult,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{Algorithm, ExperimentManifest};

const GT_STREAM: u64 = 0;
const OP_STREAM: u64 = 1;
const RIP_STREAM: u64 = 2;

pub fn trial_seed(base: u64, stream: u64, s: usize, m: usize, trial: usize) -> u64 {
    derive_seed(base, &[stream, s as u64, m as u64, trial as u64])
}

/// One recovery problem: ground truth, operator and data.
pub struct Instance {
    pub x_star: irls_core::DenseMatrix,
    pub op: MeasurementOperator,
    pub y: DVector<f64>,
    pub gt_seed: u64,
    pub op_seed: u64,
}

pub fn build_instance(manifest: &ExperimentManifest, s: usize, m: usize, trial: usize) -> Result<Instance> {
    let gt_seed = trial_seed(manifest.base_seed, GT_STREAM, s, m, trial);
    let op_seed = trial_seed(manifest.base_seed, OP_STREAM, s, m, trial);
    let gt = generate_ground_truth(manifest.n1, manifest.n2, manifest.r, s, gt_seed)?;
    let op = EnsembleDescriptor { kind: manifest.measurement, n1: manifest.n1, n2: manifest.n2, m, seed: op_seed }
        .build()?;
    let y = op.apply(&gt.x)?;
    Ok(Instance { x_star: gt.x, op, y, gt_seed, op_seed })
}

pub fn irls_config(manifest: &ExperimentManifest, s: usize) -> IrlsConfig {
    let (r_tilde, s_tilde) = manifest.model_order.orders(manifest.r, s, manifest.n1, manifest.n2);
    let mut cfg = IrlsConfig::new(r_tilde, s_tilde);
    if let Some(it) = manifest.irls_max_iter {
        cfg.max_iter = it;
    }
    cfg.record_timing = manifest.record_timing;
    cfg
}

pub fn iht_config(manifest: &ExperimentManifest, s: usize) -> IhtConfig {
    let (r_tilde, s_tilde) = manifest.model_order.orders(manifest.r, s, manifest.n1, manifest.n2);
    let mut cfg = IhtConfig::new(r_tilde, s_tilde);
    if let Some(it) = manifest.iht_max_iter {
        cfg.max_iter = it;
    }
    cfg.record_timing = manifest.record_timing;
    cfg
}

pub fn run_algorithm(
    algorithm: Algorithm,
    manifest: &ExperimentManifest,
    s: usize,
    inst: &Instance,
) -> irls_core::Result<RecoveryResult> {
    match algorithm {
        Algorithm::Irls => run_irls(&inst.op, &inst.y, &irls_config(manifest, s), Some(&inst.x_star)),
        Algorithm::Iht => run_iht(&inst.op, &inst.y, &iht_config(manifest, s), Some(&inst.x_star)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub s: usize,
    pub m: usize,
    pub trial: usize,
    pub gt_seed: u64,
    pub op_seed: u64,
    pub success: bool,
    pub final_error: Option<f64>,
    pub iterations: usize,
    pub termination: String,
    pub time_ms: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub s: usize,
    pub m: usize,
    pub success_count: usize,
    pub trials: usize,
    pub mean_error: f64,
    pub median_error: f64,
    pub mean_iters: f64,
    pub mean_time_ms: Option<f64>,
}

impl CellResult {
    pub fn success_rate(&self) -> f64 {
        self.success_count as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub algorithm: Algorithm,
    pub cells: Vec<CellResult>,
    pub trials: Vec<TrialResult>,
}

fn run_trial(
    algorithm: Algorithm,
    manifest: &ExperimentManifest,
    s: usize,
    m: usize,
    trial: usize,
) -> TrialResult {
    let start = Instant::now();
    let mut result = TrialResult {
        algorithm,
        s,
        m,
        trial,
        gt_seed: trial_seed(manifest.base_seed, GT_STREAM, s, m, trial),
        op_seed: trial_seed(manifest.base_seed, OP_STREAM, s, m, trial),
        success: false,
        final_error: None,
        iterations: 0,
        termination: String::new(),
        time_ms: None,
        failure: None,
    };
    let outcome = build_instance(manifest, s, m, trial)
        .and_then(|inst| run_algorithm(algorithm, manifest, s, &inst).map_err(anyhow::Error::from));
    match outcome {
        Ok(res) => {
            let err = res.final_error();
            result.success = err.is_some_and(|e| e < manifest.success_threshold);
            result.final_error = err;
            result.iterations = res.iterations;
            result.termination = res.termination.to_string();
        }
        Err(e) => {
            result.termination = "error".into();
            result.failure = Some(format!("{e:#}"));
        }
    }
    if manifest.record_timing {
        result.time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    result
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aggregate(s: usize, m: usize, trials: &[TrialResult]) -> CellResult {
    // failed trials count with error 1, the error of the zero matrix
    let mut errors: Vec<f64> = trials.iter().map(|t| t.final_error.filter(|e| e.is_finite()).unwrap_or(1.0)).collect();
    let n = trials.len() as f64;
    let mean_error = errors.iter().sum::<f64>() / n;
    let times: Vec<f64> = trials.iter().filter_map(|t| t.time_ms).collect();
    CellResult {
        s,
        m,
        success_count: trials.iter().filter(|t| t.success).count(),
        trials: trials.len(),
        mean_error,
        median_error: median(&mut errors),
        mean_iters: trials.iter().map(|t| t.iterations as f64).sum::<f64>() / n,
        mean_time_ms: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
    }
}

/// Runs every `(s, m, trial)` for each algorithm. Per-trial failures are
/// recorded as non-successes and never abort the grid.
pub fn run_phase_grid(manifest: &ExperimentManifest, algorithms: &[Algorithm]) -> Vec<GridOutput> {
    let cells = manifest.cells();
    let jobs: Vec<(Algorithm, usize, usize, usize)> = algorithms
        .iter()
        .flat_map(|&a| cells.iter().flat_map(move |&(s, m)| (0..manifest.trials).map(move |t| (a, s, m, t))))
        .collect();
    let results: Vec<TrialResult> = jobs.par_iter().map(|&(a, s, m, t)| run_trial(a, manifest, s, m, t)).collect();

    let per_alg = cells.len() * manifest.trials;
    algorithms
        .iter()
        .zip(results.chunks(per_alg.max(1)))
        .map(|(&algorithm, chunk)| GridOutput {
            algorithm,
            cells: chunk.chunks(manifest.trials).map(|c| aggregate(c[0].s, c[0].m, c)).collect(),
            trials: chunk.to_vec(),
        })
        .collect()
}

/// Per-algorithm trace plus a rate fit.
#[derive(Debug, Clone)]
pub struct ConvergenceOutput {
    pub algorithm: Algorithm,
    pub result: RecoveryResult,
    pub report: RateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub algorithm: Algorithm,
    pub s: usize,
    pub m: usize,
    pub iterations: usize,
    pub termination: String,
    pub final_error: Option<f64>,
    /// First iteration with error below `1e-10`.
    pub iterations_to_1e_10: Option<usize>,
    /// `mu_hat` of the quadratic fit, when one is found.
    pub quadratic_mu: Option<f64>,
    pub quadratic_pairs: Option<usize>,
    /// Geometric-mean contraction factor `e_{k+1} / e_k` over the iterations
    /// with error in `[1e-10, 0.5]`.
    pub linear_rate: Option<f64>,
}

pub fn linear_rate(errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| (1e-10..=0.5).contains(&e))
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mk = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mk).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mk) * (p.1 - me)).sum();
    Some((sxy / sxx).exp())
}

pub fn rate_report(algorithm: Algorithm, s: usize, m: usize, result: &RecoveryResult) -> RateReport {
    let errors = result.trace.errors();
    let fit: Option<QuadraticFit> = fit_quadratic_rate(&errors, 3);
    RateReport {
        algorithm,
        s,
        m,
        iterations: result.iterations,
        termination: result.termination.to_string(),
        final_error: result.final_error(),
        iterations_to_1e_10: errors.iter().position(|&e| e < 1e-10).map(|k| k + 1),
        quadratic_mu: fit.map(|f| f.mu_hat),
        quadratic_pairs: fit.map(|f| f.pairs),
        linear_rate: linear_rate(&errors),
    }
}

fn single_cell(manifest: &ExperimentManifest) -> (usize, usize) {
    manifest.cells()[0]
}

/// Full traces on the first `(s, m)` cell of the manifest, trial 0.
pub fn run_convergence(manifest: &ExperimentManifest, algorithms: &[Algorithm]) -> Result<Vec<ConvergenceOutput>> {
    let (s, m) = single_cell(manifest);
    let inst = build_instance(manifest, s, m, 0)?;
    algorithms
        .iter()
        .map(|&algorithm| {
            let result = run_algorithm(algorithm, manifest, s, &inst)
                .with_context(|| format!("{} on s={s}, m={m}", algorithm.name()))?;
            let report = rate_report(algorithm, s, m, &result);
            Ok(ConvergenceOutput { algorithm, result, report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveRow {
    pub k: usize,
    pub sqrt_f_lr: f64,
    pub sqrt_f_sp: f64,
    pub sqrt_f: f64,
    pub rel_error: f64,
}

/// IRLS objective decomposition per iteration on the first cell, trial 0.
pub fn run_objective_evolution(manifest: &ExperimentManifest) -> Result<(RecoveryResult, Vec<ObjectiveRow>)> {
    let (s, m) = single_cell(manifest);
    let inst = build_instance(manifest, s, m, 0)?;
    let result = run_algorithm(Algorithm::Irls, manifest, s, &inst).with_context(|| format!("irls on s={s}, m={m}"))?;
    let rows = result
        .trace
        .records
        .iter()
        .map(|r| ObjectiveRow {
            k: r.k,
            sqrt_f_lr: r.f_lr.unwrap_or(f64::NAN).sqrt(),
            sqrt_f_sp: r.f_sp.unwrap_or(f64::NAN).sqrt(),
            sqrt_f: r.f.unwrap_or(f64::NAN).sqrt(),
            rel_error: r.rel_error.unwrap_or(f64::NAN),
        })
        .collect();
    Ok((result, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipRow {
    pub s: usize,
    pub m: usize,
    pub trial: usize,
    pub delta_estimate: f64,
}

/// One operator draw per `(s, m, trial)`, probed with 50 random model-set
/// matrices of rank `r` and row sparsity `s`.
pub fn run_rip_probe(manifest: &ExperimentManifest) -> Result<Vec<RipRow>> {
    let jobs: Vec<(usize, usize, usize)> = manifest
        .cells()
        .into_iter()
        .flat_map(|(s, m)| (0..manifest.trials).map(move |t| (s, m, t)))
        .collect();
    jobs.par_iter()
        .map(|&(s, m, trial)| {
            let seed = trial_seed(manifest.base_seed, OP_STREAM, s, m, trial);
            let op = EnsembleDescriptor { kind: manifest.measurement, n1: manifest.n1, n2: manifest.n2, m, seed }
                .build()?;
            let probe_seed = trial_seed(manifest.base_seed, RIP_STREAM, s, m, trial);
            let delta_estimate = rip_probe(&op, manifest.r, s, 50, probe_seed)?;
            Ok(RipRow { s, m, trial, delta_estimate })
        })
        .collect()
}
