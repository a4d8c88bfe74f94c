//! CSV and JSON writers. Floats use 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use irls_core::trace::fmt_f64;

use crate::experiments::{CellResult, ConvergenceOutput, GridOutput, ObjectiveRow, RipRow, TrialResult};
use crate::manifest::ExperimentManifest;

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_text(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

pub const GRID_HEADER: &str = "s,m,success_rate,trials,mean_error,median_error,mean_iters,mean_time_ms";
pub const TRIAL_HEADER: &str = "s,m,trial,gt_seed,op_seed,success,final_error,iterations,termination,time_ms,failure";

pub fn grid_csv(cells: &[CellResult]) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for c in cells {
        out += &format!(
            "{},{},{},{},{},{},{},{}\n",
            c.s,
            c.m,
            fmt_f64(c.success_rate()),
            c.trials,
            fmt_f64(c.mean_error),
            fmt_f64(c.median_error),
            fmt_f64(c.mean_iters),
            opt(c.mean_time_ms)
        );
    }
    out
}

pub fn trials_csv(trials: &[TrialResult]) -> String {
    let mut out = format!("{TRIAL_HEADER}\n");
    for t in trials {
        out += &format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            t.s,
            t.m,
            t.trial,
            t.gt_seed,
            t.op_seed,
            t.success as u8,
            opt(t.final_error),
            t.iterations,
            t.termination,
            opt(t.time_ms),
            csv_text(t.failure.as_deref().unwrap_or(""))
        );
    }
    out
}

pub fn objective_csv(rows: &[ObjectiveRow]) -> String {
    let mut out = String::from("k,sqrt_f_lr,sqrt_f_sp,sqrt_f,rel_error\n");
    for r in rows {
        out += &format!(
            "{},{},{},{},{}\n",
            r.k,
            fmt_f64(r.sqrt_f_lr),
            fmt_f64(r.sqrt_f_sp),
            fmt_f64(r.sqrt_f),
            fmt_f64(r.rel_error)
        );
    }
    out
}

pub fn rip_csv(rows: &[RipRow]) -> String {
    let mut out = String::from("s,m,trial,delta_estimate\n");
    for r in rows {
        out += &format!("{},{},{},{}\n", r.s, r.m, r.trial, fmt_f64(r.delta_estimate));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn write_manifest_echo(dir: &Path, manifest: &ExperimentManifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "manifest.json", &(serde_json::to_string_pretty(manifest)? + "\n"))
}

pub fn write_grid(dir: &Path, outputs: &[GridOutput]) -> Result<()> {
    for g in outputs {
        let name = g.algorithm.name();
        write(dir, &format!("phase_{name}.csv"), &grid_csv(&g.cells))?;
        write(dir, &format!("trials_{name}.csv"), &trials_csv(&g.trials))?;
    }
    Ok(())
}

pub fn write_convergence(dir: &Path, outputs: &[ConvergenceOutput]) -> Result<()> {
    for c in outputs {
        write(dir, &format!("convergence_{}.csv", c.algorithm.name()), &c.result.trace.to_csv_string())?;
    }
    let reports: Vec<_> = outputs.iter().map(|c| &c.report).collect();
    write(dir, "rate_report.json", &(serde_json::to_string_pretty(&reports)? + "\n"))
}

pub fn write_objective(dir: &Path, trace_csv: &str, rows: &[ObjectiveRow]) -> Result<()> {
    write(dir, "objective_irls.csv", &objective_csv(rows))?;
    write(dir, "trace_irls.csv", trace_csv)
}

pub fn write_rip(dir: &Path, rows: &[RipRow]) -> Result<()> {
    write(dir, "rip_probe.csv", &rip_csv(rows))
}
