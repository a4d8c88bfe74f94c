//! Experiment harness around `irls-core`: phase-transition grids,
//! convergence traces, objective logs and RIP probes, driven by JSON
//! manifests and written as CSV.

pub mod experiments;
pub mod manifest;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use experiments::{run_convergence, run_objective_evolution, run_phase_grid, run_rip_probe, CellResult, GridOutput};
pub use manifest::{degrees_of_freedom, Algorithm, ExperimentKind, ExperimentManifest, ManifestError, ModelOrder};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MANIFEST: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "irls-bench", version, about = "Recovery experiments for low-rank, row-sparse IRLS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; overrides the manifest's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Comma-separated algorithms (irls, iht); overrides the manifest.
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Success rates over a grid of (s, m).
    PhaseGrid(CommonArgs),
    /// Error traces and rate fits on one instance.
    Convergence(CommonArgs),
    /// IRLS objective decomposition per iteration on one instance.
    ObjectiveEvolution(CommonArgs),
    /// Empirical RIP constants of random operators.
    RipProbe(CommonArgs),
}

#[derive(Debug)]
pub enum HarnessError {
    Manifest(ManifestError),
    Internal(anyhow::Error),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::Manifest(e) => write!(f, "{e}"),
            HarnessError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Manifest(_) => EXIT_MANIFEST,
            HarnessError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<anyhow::Error> for HarnessError {
    fn from(e: anyhow::Error) -> Self {
        HarnessError::Internal(e)
    }
}

fn manifest_err(msg: String) -> HarnessError {
    HarnessError::Manifest(ManifestError(msg))
}

fn prepare(kind: ExperimentKind, args: &CommonArgs) -> Result<(ExperimentManifest, PathBuf), HarnessError> {
    let mut manifest = ExperimentManifest::load(&args.manifest).map_err(HarnessError::Manifest)?;
    if manifest.experiment != kind {
        return Err(manifest_err(format!("manifest describes a {} experiment, not {kind}", manifest.experiment)));
    }
    if let Some(list) = &args.algorithms {
        manifest.algorithms = list
            .iter()
            .map(|a| Algorithm::parse(a).ok_or_else(|| manifest_err(format!("unknown algorithm `{a}`"))))
            .collect::<Result<_, _>>()?;
        manifest.validate().map_err(HarnessError::Manifest)?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| manifest.output_dir.clone())
        .ok_or_else(|| manifest_err("no output directory: pass --out or set output_dir".into()))?;
    Ok((manifest, out))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(manifest_err("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Internal(e.into()))?;
    Ok(pool.install(f))
}

/// Runs one subcommand and writes its outputs. Returns a short summary.
pub fn run(cli: &Cli) -> Result<String, HarnessError> {
    match &cli.command {
        Command::PhaseGrid(args) => {
            let (manifest, out) = prepare(ExperimentKind::PhaseGrid, args)?;
            let outputs = with_threads(args.threads, || run_phase_grid(&manifest, &manifest.algorithms))?;
            output::write_manifest_echo(&out, &manifest)?;
            output::write_grid(&out, &outputs)?;
            Ok(summarize_grid(&outputs, &out))
        }
        Command::Convergence(args) => {
            let (manifest, out) = prepare(ExperimentKind::Convergence, args)?;
            let outputs = with_threads(args.threads, || run_convergence(&manifest, &manifest.algorithms))??;
            output::write_manifest_echo(&out, &manifest)?;
            output::write_convergence(&out, &outputs)?;
            Ok(outputs
                .iter()
                .map(|c| {
                    format!(
                        "{}: {} iterations ({}), final error {}",
                        c.algorithm.name(),
                        c.report.iterations,
                        c.report.termination,
                        c.report.final_error.map_or("n/a".into(), |e| format!("{e:.3e}"))
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::ObjectiveEvolution(args) => {
            let (manifest, out) = prepare(ExperimentKind::ObjectiveEvolution, args)?;
            let (result, rows) = with_threads(args.threads, || run_objective_evolution(&manifest))??;
            output::write_manifest_echo(&out, &manifest)?;
            output::write_objective(&out, &result.trace.to_csv_string(), &rows)?;
            Ok(format!("irls: {} iterations ({})", result.iterations, result.termination))
        }
        Command::RipProbe(args) => {
            let (manifest, out) = prepare(ExperimentKind::RipProbe, args)?;
            let rows = with_threads(args.threads, || run_rip_probe(&manifest))??;
            output::write_manifest_echo(&out, &manifest)?;
            output::write_rip(&out, &rows)?;
            let worst = rows.iter().map(|r| r.delta_estimate).fold(0.0, f64::max);
            Ok(format!("{} probes, largest estimate {worst:.4}", rows.len()))
        }
    }
}

fn summarize_grid(outputs: &[GridOutput], out: &Path) -> String {
    let mut lines = vec![format!("wrote {}", out.display())];
    for g in outputs {
        let ok: usize = g.cells.iter().map(|c| c.success_count).sum();
        let total: usize = g.cells.iter().map(|c| c.trials).sum();
        lines.push(format!("{}: {ok}/{total} successful trials", g.algorithm.name()));
    }
    lines.join("\n")
}
