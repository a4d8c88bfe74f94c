use std::fmt;
use std::path::{Path, PathBuf};

use irls_core::MeasurementKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PhaseGrid,
    Convergence,
    ObjectiveEvolution,
    RipProbe,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::PhaseGrid => "phase-grid",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::ObjectiveEvolution => "objective-evolution",
            ExperimentKind::RipProbe => "rip-probe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Irls,
    Iht,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Irls => "irls",
            Algorithm::Iht => "iht",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "irls" => Some(Algorithm::Irls),
            "iht" => Some(Algorithm::Iht),
            _ => None,
        }
    }
}

/// How the algorithms are told the model orders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelOrder {
    /// `r~ = r`, `s~ = s`.
    #[default]
    Exact,
    /// `r~ = 2r`, `s~ = floor(1.5 s)`, clipped to the dimensions.
    Overestimate,
}

impl ModelOrder {
    pub fn orders(&self, r: usize, s: usize, n1: usize, n2: usize) -> (usize, usize) {
        match self {
            ModelOrder::Exact => (r, s),
            ModelOrder::Overestimate => ((2 * r).min(n1.min(n2)), (3 * s / 2).min(n1)),
        }
    }
}

fn default_trials() -> usize {
    64
}

fn default_threshold() -> f64 {
    1e-4
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Irls, Algorithm::Iht]
}

fn default_measurement() -> MeasurementKind {
    MeasurementKind::DenseGaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub experiment: ExperimentKind,
    pub n1: usize,
    pub n2: usize,
    pub r: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_measurement")]
    pub measurement: MeasurementKind,
    pub s_values: Vec<usize>,
    /// Explicit measurement counts; shared by every `s`.
    #[serde(default)]
    pub m_values: Option<Vec<usize>>,
    /// Measurement counts as multiples of `r (s + n2 - r)`, rounded down.
    #[serde(default)]
    pub oversampling: Option<Vec<f64>>,
    #[serde(default)]
    pub model_order: ModelOrder,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Wall times make outputs machine dependent, so they are opt-in.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub irls_max_iter: Option<usize>,
    #[serde(default)]
    pub iht_max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestError(pub String);

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid manifest: {}", self.0)
    }
}

impl std::error::Error for ManifestError {}

/// `r (s + n2 - r)`, the number of degrees of freedom of the model set.
pub fn degrees_of_freedom(r: usize, s: usize, n2: usize) -> usize {
    r * (s + n2 - r)
}

impl ExperimentManifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let manifest: ExperimentManifest = serde_json::from_str(text).map_err(|e| ManifestError(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let err = |msg: String| Err(ManifestError(msg));
        if self.n1 == 0 || self.n2 == 0 {
            return err("dimensions must be positive".into());
        }
        if self.r == 0 || self.r > self.n1.min(self.n2) {
            return err(format!("rank {} outside 1..={}", self.r, self.n1.min(self.n2)));
        }
        if self.s_values.is_empty() {
            return err("s_values is empty".into());
        }
        if self.experiment != ExperimentKind::RipProbe && self.algorithms.is_empty() {
            return err("no algorithms selected".into());
        }
        for &s in &self.s_values {
            if s < self.r || s > self.n1 {
                return err(format!("s = {s} outside {}..={}", self.r, self.n1));
            }
        }
        match (&self.m_values, &self.oversampling) {
            (Some(_), Some(_)) => return err("give either m_values or oversampling, not both".into()),
            (None, None) => return err("one of m_values or oversampling is required".into()),
            (Some(ms), None) => {
                if ms.is_empty() || ms.contains(&0) {
                    return err("m_values must be nonempty and positive".into());
                }
            }
            (None, Some(fs)) => {
                if fs.is_empty() || fs.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
                    return err("oversampling factors must be nonempty, positive and finite".into());
                }
            }
        }
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if self.success_threshold.is_nan() || self.success_threshold <= 0.0 {
            return err("success_threshold must be positive".into());
        }
        if self.irls_max_iter == Some(0) || self.iht_max_iter == Some(0) {
            return err("iteration limits must be positive".into());
        }
        Ok(())
    }

    /// Measurement counts for sparsity `s`.
    pub fn m_for(&self, s: usize) -> Vec<usize> {
        match (&self.m_values, &self.oversampling) {
            (Some(ms), _) => ms.clone(),
            (None, Some(fs)) => {
                let dof = degrees_of_freedom(self.r, s, self.n2) as f64;
                fs.iter().map(|f| ((f * dof + 1e-9).floor() as usize).max(1)).collect()
            }
            (None, None) => Vec::new(),
        }
    }

    /// All `(s, m)` cells in output order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.s_values.iter().flat_map(|&s| self.m_for(s).into_iter().map(move |m| (s, m))).collect()
    }
}
