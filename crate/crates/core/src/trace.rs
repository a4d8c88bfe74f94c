//! Per-iteration records, run results and rate fitting on error sequences.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub r_k: usize,
    pub s_k: usize,
    /// `||X^(k) - X^(k-1)||_F / ||X^(k)||_F`.
    pub rel_change: f64,
    pub f_lr: Option<f64>,
    pub f_sp: Option<f64>,
    pub f: Option<f64>,
    pub rel_error: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub epsilon_floored: bool,
    pub delta_floored: bool,
}

pub const TRACE_HEADER: &str =
    "k,epsilon,delta,r_k,s_k,rel_change,f_lr,f_sp,f,rel_error,wall_time_ms,epsilon_floored,delta_floored";

/// Formats a float with 17 significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.k,
            fmt_f64(self.epsilon),
            fmt_f64(self.delta),
            self.r_k,
            self.s_k,
            fmt_f64(self.rel_change),
            fmt_opt(self.f_lr),
            fmt_opt(self.f_sp),
            fmt_opt(self.f),
            fmt_opt(self.rel_error),
            fmt_opt(self.wall_time_ms),
            self.epsilon_floored as u8,
            self.delta_floored as u8,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub records: Vec<TraceRecord>,
}

impl IterateTrace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.rel_error).collect()
    }

    pub fn objective_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.f).collect()
    }

    /// Largest increase `F_{k+1} - F_k` along the trace (negative when strictly decreasing).
    pub fn max_objective_increase(&self) -> f64 {
        let f = self.objective_values();
        f.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative change dropped below the tolerance.
    Tolerance,
    MaxIter,
    /// Both smoothing parameters reached their floors.
    SmoothingFloor,
    /// Residual blew up (baseline only).
    Diverged,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIter => "max_iter",
            Termination::SmoothingFloor => "smoothing_floor",
            Termination::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub x_final: DenseMatrix,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: IterateTrace,
}

impl RecoveryResult {
    pub fn final_error(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.rel_error)
    }
}

/// Quadratic-rate fit of an error sequence, see [`fit_quadratic_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    /// Largest `e_{k+1} / e_k^2` over the run.
    pub mu_hat: f64,
    /// Index into the error slice of the first pair.
    pub start: usize,
    /// Number of consecutive pairs.
    pub pairs: usize,
    /// `max q / min q` over the run.
    pub spread: f64,
}

pub const RATE_ENTRY_ERROR: f64 = 0.5;
pub const RATE_ERROR_FLOOR: f64 = 1e-11;
pub const RATE_MAX_SPREAD: f64 = 10.0;
pub const RATE_MIN_CONTRACTION_DROP: f64 = 100.0;

/// Looks for at least `min_pairs` consecutive pairs `(e_k, e_{k+1})` with
/// `e_k <= 0.5` and `e_{k+1} >= 1e-11` whose quotients `q_k = e_{k+1} / e_k^2`
/// stay within a factor 10 of each other, and over which the contraction
/// factor `e_{k+1} / e_k` falls by at least 100x. A linearly convergent
/// sequence has a constant contraction factor and is rejected.
///
/// Returns the longest such run (the latest one on ties).
pub fn fit_quadratic_rate(errors: &[f64], min_pairs: usize) -> Option<QuadraticFit> {
    let usable = |k: usize| {
        let (a, b) = (errors[k], errors[k + 1]);
        a > 0.0 && a <= RATE_ENTRY_ERROR && b >= RATE_ERROR_FLOOR && a.is_finite() && b.is_finite()
    };
    let n_pairs = errors.len().saturating_sub(1);
    let q: Vec<f64> = (0..n_pairs).map(|k| errors[k + 1] / (errors[k] * errors[k])).collect();
    let mut best: Option<QuadraticFit> = None;
    for start in 0..n_pairs {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for end in start..n_pairs {
            if !usable(end) {
                break;
            }
            lo = lo.min(q[end]);
            hi = hi.max(q[end]);
            let spread = hi / lo;
            if spread >= RATE_MAX_SPREAD {
                break;
            }
            let pairs = end - start + 1;
            if pairs < min_pairs.max(1) {
                continue;
            }
            let first = errors[start + 1] / errors[start];
            let last = errors[end + 1] / errors[end];
            if first / last < RATE_MIN_CONTRACTION_DROP {
                continue;
            }
            if best.is_none_or(|b| pairs >= b.pairs) {
                best = Some(QuadraticFit { mu_hat: hi, start, pairs, spread });
            }
        }
    }
    best
}
