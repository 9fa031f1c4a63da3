//! Declarative experiment description.

use std::path::{Path, PathBuf};

use polyq_core::observable::ObservableSpec;
use polyq_core::polygon::{builtin, PolygonFile};
use polyq_core::RationalPolygon;
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub polygon: PolygonSpec,
    pub mesh: MeshParams,
    pub solver: SolverParams,
    /// Shorthands such as `region:left-half` or full observable objects.
    #[serde(default)]
    pub observables: Vec<ObservableEntry>,
    #[serde(default)]
    pub analysis: AnalysisParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical: Option<ClassicalParams>,
    pub output_dir: PathBuf,
}

/// A builtin name or an explicit polygon.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolygonSpec {
    Builtin(String),
    Explicit(PolygonFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshParams {
    pub h: f64,
    #[serde(default)]
    pub refine: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub modes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_block")]
    pub block: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_block() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableEntry {
    Short(String),
    Full(ObservableSpec),
}

impl ObservableEntry {
    pub fn spec(&self) -> Result<ObservableSpec, String> {
        match self {
            ObservableEntry::Short(s) => ObservableSpec::parse(s).map_err(|e| e.to_string()),
            ObservableEntry::Full(s) => Ok(s.clone()),
        }
    }
}

/// `"auto"` (ten decile cutoffs) or explicit increasing energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoffs {
    Named(String),
    Energies(Vec<f64>),
}

impl Default for Cutoffs {
    fn default() -> Self {
        Cutoffs::Named("auto".into())
    }
}

impl Cutoffs {
    /// Parses the command-line form `auto` or `E1,E2,...`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s.trim() == "auto" {
            return Ok(Cutoffs::default());
        }
        parse_list(s).map(Cutoffs::Energies)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    #[serde(default)]
    pub cutoffs: Cutoffs,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Relative eigenvalue spacing below which modes are treated as one
    /// degenerate cluster; `null` keeps the solver's basis.
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: Option<f64>,
    /// Extra slack in the key-bound comparison; derived from the quadrature
    /// and solver tolerances when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowance: Option<f64>,
}

fn default_epsilons() -> Vec<f64> {
    polyq_core::ergodicity::EPSILONS.to_vec()
}

fn default_cluster_tol() -> Option<f64> {
    Some(1e-8)
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self { cutoffs: Cutoffs::default(), epsilons: default_epsilons(), cluster_tol: default_cluster_tol(), allowance: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalParams {
    pub t_grid: Vec<f64>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("not a number: {x:?}")))
        .collect()
}

/// A polygon argument: a path to a polygon JSON file, else a builtin name.
pub fn resolve_polygon(arg: &str) -> Result<RationalPolygon, String> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{arg}: {e}"))?;
        let file: PolygonFile = serde_json::from_str(&text).map_err(|e| format!("{arg}: {e}"))?;
        return RationalPolygon::try_from(file).map_err(|e| e.to_string());
    }
    builtin(arg).map_err(|e| e.to_string())
}

impl PolygonSpec {
    pub fn resolve(&self) -> Result<RationalPolygon, String> {
        match self {
            PolygonSpec::Builtin(name) => builtin(name).map_err(|e| e.to_string()),
            PolygonSpec::Explicit(f) => RationalPolygon::try_from(f.clone()).map_err(|e| e.to_string()),
        }
    }
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> RunError {
    RunError::ConfigInvalid { path: path.into(), msg: msg.into() }
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let poly = self.polygon.resolve().map_err(|e| invalid("polygon", e))?;
        let h = self.mesh.h;
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("mesh.h", format!("must be positive and finite, got {h}")));
        }
        if self.mesh.refine > 6 {
            return Err(invalid("mesh.refine", format!("at most 6 levels, got {}", self.mesh.refine)));
        }
        let s = &self.solver;
        if s.modes == 0 || s.modes > 5000 {
            return Err(invalid("solver.modes", format!("must be in 1..=5000, got {}", s.modes)));
        }
        if !(s.tol >= 1e-14 && s.tol <= 1e-4) {
            return Err(invalid("solver.tol", format!("must be in [1e-14, 1e-4], got {}", s.tol)));
        }
        if s.block == 0 || s.block > 16 {
            return Err(invalid("solver.block", format!("must be in 1..=16, got {}", s.block)));
        }
        for (i, o) in self.observables.iter().enumerate() {
            let spec = o.spec().map_err(|e| invalid(format!("observables[{i}]"), e))?;
            polyq_core::Observable::new(spec, &poly).map_err(|e| invalid(format!("observables[{i}]"), e.to_string()))?;
        }
        let a = &self.analysis;
        match &a.cutoffs {
            Cutoffs::Named(n) if n == "auto" => {}
            Cutoffs::Named(n) => return Err(invalid("analysis.cutoffs", format!("expected \"auto\" or a list, got {n:?}"))),
            Cutoffs::Energies(e) => {
                if e.is_empty() || e.iter().any(|x| !(x.is_finite() && *x > 0.0)) || e.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("analysis.cutoffs", "energies must be positive and strictly increasing"));
                }
            }
        }
        for (i, e) in a.epsilons.iter().enumerate() {
            if !(e.is_finite() && *e > 0.0) {
                return Err(invalid(format!("analysis.epsilons[{i}]"), format!("must be positive, got {e}")));
            }
        }
        if let Some(t) = a.cluster_tol {
            if !(t.is_finite() && (0.0..1e-2).contains(&t)) {
                return Err(invalid("analysis.cluster_tol", format!("must be in [0, 1e-2), got {t}")));
            }
        }
        if let Some(x) = a.allowance {
            if !(x.is_finite() && x >= 0.0) {
                return Err(invalid("analysis.allowance", format!("must be nonnegative, got {x}")));
            }
        }
        if let Some(c) = &self.classical {
            if c.t_grid.is_empty() {
                return Err(invalid("classical.t_grid", "must not be empty"));
            }
            for (i, t) in c.t_grid.iter().enumerate() {
                if !(t.is_finite() && *t > 0.0) {
                    return Err(invalid(format!("classical.t_grid[{i}]"), format!("must be positive, got {t}")));
                }
            }
            if !(100..=100_000_000).contains(&c.samples) {
                return Err(invalid("classical.samples", format!("must be in 100..=1e8, got {}", c.samples)));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir", "must not be empty"));
        }
        Ok(())
    }
}
