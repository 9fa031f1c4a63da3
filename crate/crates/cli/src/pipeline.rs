//! Stage functions shared by `run` and the single-stage commands, and the
//! cached experiment pipeline.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use polyq_core::billiard::{lemma1_functional, Lemma1Estimate};
use polyq_core::ergodicity::{
    chebyshev_check, decile_cutoffs, extract_typical, key_bound_check, local_weyl_average, measure_series,
    quantum_variance, BasisPolicy, ChebyshevCheck, ErgodicityError, KeyBoundCheck, MeasureSeries, TypicalSubsequence,
    VarianceCurve,
};
use polyq_core::mesh::{self, MeshQuality, TriangleMesh};
use polyq_core::polygon::PolygonFile;
use polyq_core::spectral::{assemble, solve_lowest, weyl_check, EigenOptions, Spectrum, WeylCheck};
use polyq_core::{Exec, Observable, RationalPolygon};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Cutoffs, ExperimentConfig};
use crate::RunError;

/// A spectrum together with the polygon it was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub polygon: RationalPolygon,
    pub spectrum: Spectrum,
}

/// Variance, running means, typical subsequences and the Chebyshev
/// cross-check for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub observable: String,
    pub target: f64,
    pub curve: VarianceCurve,
    pub running_means: Vec<f64>,
    pub typical: Vec<TypicalSubsequence>,
    pub chebyshev: Vec<ChebyshevCheck>,
}

pub fn basis_policy(cluster_tol: Option<f64>) -> BasisPolicy {
    match cluster_tol {
        Some(rel_tol) => BasisPolicy::ObservableAdapted { rel_tol },
        None => BasisPolicy::AsSolved,
    }
}

pub fn resolve_cutoffs(c: &Cutoffs, energies: &[f64]) -> Vec<f64> {
    match c {
        Cutoffs::Energies(e) => e.clone(),
        Cutoffs::Named(_) => decile_cutoffs(energies, 10),
    }
}

pub fn analyse(series: &MeasureSeries, cutoffs: &[f64], epsilons: &[f64]) -> Result<VarianceReport, ErgodicityError> {
    let curve = quantum_variance(series, cutoffs)?;
    let running_means = local_weyl_average(series, cutoffs)?;
    let mut typical = Vec::new();
    let mut chebyshev = Vec::new();
    for &eps in epsilons {
        let t = extract_typical(series, eps)?;
        chebyshev.push(chebyshev_check(series, &t));
        typical.push(t);
    }
    Ok(VarianceReport { observable: series.observable.clone(), target: series.target, curve, running_means, typical, chebyshev })
}

/// Slack for the key-bound comparison: the spread of `V` allowed by an
/// error `q` in every element, `2√V q + q²`, with `q` the quadrature error
/// plus the solver tolerance.
pub fn default_allowance(series: &MeasureSeries, top_variance: f64, solver_tol: f64) -> f64 {
    let q = series.max_quadrature_error() + solver_tol;
    2.0 * top_variance.sqrt() * q + q * q
}

pub fn write_series_csv(series: &MeasureSeries, path: &Path) -> std::io::Result<()> {
    let mut s = String::from("n,E_n,mu_n,target\n");
    for (i, (e, v)) in series.energies.iter().zip(&series.values).enumerate() {
        s.push_str(&format!("{},{},{},{}\n", i + 1, e, v, series.target));
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_series_csv(path: &Path) -> Result<MeasureSeries, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("n,E_n,mu_n,target") {
        return Err(format!("{}: expected header n,E_n,mu_n,target", path.display()));
    }
    let mut energies = Vec::new();
    let mut values = Vec::new();
    let mut target = None;
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || format!("{}: malformed row {}", path.display(), i + 2);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 || f[0].trim().parse::<usize>().ok() != Some(i + 1) {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        energies.push(num(f[1])?);
        values.push(num(f[2])?);
        let t = num(f[3])?;
        if target.is_some_and(|x| x != t) {
            return Err(format!("{}: target changes at row {}", path.display(), i + 2));
        }
        target = Some(t);
    }
    let target = target.ok_or_else(|| format!("{}: no rows", path.display()))?;
    if energies.windows(2).any(|w| w[1] < w[0]) {
        return Err(format!("{}: energies are not sorted", path.display()));
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(MeasureSeries::from_values(&label, target, energies, values))
}

pub fn write_variance_csv(r: &VarianceReport, path: &Path) -> std::io::Result<()> {
    let mut s = String::from("E,N,V,running_mean\n");
    for i in 0..r.curve.energies.len() {
        s.push_str(&format!("{},{},{},{}\n", r.curve.energies[i], r.curve.counts[i], r.curve.variance[i], r.running_means[i]));
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(tmp, path)
}

fn hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    format!("{:x}", h.finalize())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// SHA-256 of the stage inputs (including upstream keys).
    pub key: String,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub quality: MeshQuality,
    pub interior_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub modes: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub max_residual: f64,
    pub orthonormality_error: f64,
    pub weyl: WeylCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub epsilon: f64,
    pub density: f64,
    pub chebyshev_holds: bool,
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSummary {
    pub observable: String,
    pub target: f64,
    pub max_quadrature_error: f64,
    pub top_cutoff: f64,
    pub variance_first: f64,
    pub variance_top: f64,
    pub running_mean_top: f64,
    pub densities: Vec<DensitySummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub classical: Vec<Lemma1Estimate>,
    /// Against the classical estimate at the largest `T`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub key_bound: Option<KeyBoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub polygon: String,
    pub mesh: MeshSummary,
    pub spectrum: SpectrumSummary,
    pub observables: Vec<ObservableSummary>,
}

/// Everything needed to audit a run. Contains no timings or cache state, so
/// identical configs give byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
    pub cached: bool,
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

struct Runner<'a> {
    out: &'a Path,
    stages: Vec<StageRecord>,
    timings: Vec<StageTiming>,
}

impl Runner<'_> {
    /// Loads the artifact for `key` if present, else computes and stores it.
    fn stage<T, F>(&mut self, name: &str, key: String, compute: F) -> Result<T, RunError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, String>,
    {
        let rel = format!("stages/{}-{}.json", name.split('[').next().unwrap_or(name), &key[..16]);
        let path = self.out.join(&rel);
        let start = Instant::now();
        let fail = |msg: String| RunError::StageFailed { stage: name.to_string(), msg };
        let (value, cached) = match read_json::<T>(&path) {
            Ok(v) => (v, true),
            _ => {
                let v = compute().map_err(fail)?;
                write_json(&v, &path).map_err(|e| fail(e.to_string()))?;
                (v, false)
            }
        };
        self.timings.push(StageTiming { name: name.to_string(), seconds: start.elapsed().as_secs_f64(), cached });
        self.stages.push(StageRecord { name: name.to_string(), key, outputs: vec![rel] });
        Ok(value)
    }

    fn extra_output(&mut self, rel: String, write: impl FnOnce(&Path) -> std::io::Result<()>) -> Result<(), RunError> {
        let stage = self.stages.last_mut().expect("attached to a stage");
        write(&self.out.join(&rel)).map_err(|e| RunError::StageFailed { stage: stage.name.clone(), msg: e.to_string() })?;
        stage.outputs.push(rel);
        Ok(())
    }
}

/// Runs mesh → solve → measure → variance → classical, reusing any stage
/// whose inputs are unchanged, and writes `report.json` and `timings.json`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let poly = cfg.polygon.resolve().map_err(|msg| RunError::ConfigInvalid { path: "polygon".into(), msg })?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| RunError::StageFailed { stage: "setup".into(), msg: format!("{}: {e}", out.display()) })?;
    let mut r = Runner { out, stages: Vec::new(), timings: Vec::new() };
    let poly_json = json(&PolygonFile::from(poly.clone()));

    let mesh_key = hash(&["mesh", &poly_json, &json(&cfg.mesh)]);
    let (h, refine) = (cfg.mesh.h, cfg.mesh.refine);
    let mesh: TriangleMesh = r.stage("mesh", mesh_key.clone(), || mesh::build(&poly, h, refine).map_err(|e| e.to_string()))?;

    let solve_key = hash(&["solve", &mesh_key, &json(&cfg.solver)]);
    let opts = EigenOptions { block: cfg.solver.block, tol: cfg.solver.tol, seed: cfg.solver.seed, ..EigenOptions::default() };
    let modes = cfg.solver.modes;
    let sf: SpectrumFile = r.stage("solve", solve_key.clone(), || {
        let sys = assemble(&mesh).map_err(|e| e.to_string())?;
        let spectrum = solve_lowest(&sys, modes, &opts).map_err(|e| e.to_string())?;
        Ok(SpectrumFile { polygon: poly.clone(), spectrum })
    })?;
    let spectrum = &sf.spectrum;
    let interior_nodes = (0..mesh.nodes().len()).filter(|&i| !mesh.is_boundary(i)).count();

    let policy = basis_policy(cfg.analysis.cluster_tol);
    let mut observables = Vec::new();
    for (i, entry) in cfg.observables.iter().enumerate() {
        let spec = entry.spec().map_err(|msg| RunError::ConfigInvalid { path: format!("observables[{i}]"), msg })?;
        let obs = Observable::new(spec.clone(), &poly)
            .map_err(|e| RunError::ConfigInvalid { path: format!("observables[{i}]"), msg: e.to_string() })?;
        let spec_json = json(&spec);

        let measure_key = hash(&["measure", &solve_key, &spec_json, &json(&policy)]);
        let series: MeasureSeries =
            r.stage(&format!("measure[{i}]"), measure_key.clone(), || Ok(measure_series(spectrum, &obs, policy, Exec::default())))?;
        r.extra_output(format!("obs{i}_series.csv"), |p| write_series_csv(&series, p))?;

        let cutoffs = resolve_cutoffs(&cfg.analysis.cutoffs, &series.energies);
        let variance_key = hash(&["variance", &measure_key, &json(&cutoffs), &json(&cfg.analysis.epsilons)]);
        let eps = &cfg.analysis.epsilons;
        let var: VarianceReport =
            r.stage(&format!("variance[{i}]"), variance_key, || analyse(&series, &cutoffs, eps).map_err(|e| e.to_string()))?;
        r.extra_output(format!("obs{i}_variance.csv"), |p| write_variance_csv(&var, p))?;

        let classical: Vec<Lemma1Estimate> = match &cfg.classical {
            Some(c) => {
                let key = hash(&["classical", &poly_json, &spec_json, &json(c)]);
                r.stage(&format!("classical[{i}]"), key, || {
                    c.t_grid
                        .iter()
                        .map(|&t| lemma1_functional(&poly, &obs, t, c.samples, c.seed, Exec::default()).map_err(|e| e.to_string()))
                        .collect()
                })?
            }
            None => Vec::new(),
        };

        let n = var.curve.variance.len();
        let top_variance = var.curve.variance[n - n.div_ceil(10)..].iter().copied().fold(0.0, f64::max);
        let allowance = cfg.analysis.allowance.unwrap_or_else(|| default_allowance(&series, top_variance, cfg.solver.tol));
        let key_bound = classical
            .iter()
            .max_by(|a, b| a.t.total_cmp(&b.t))
            .map(|e| key_bound_check(&var.curve, e.key_bound, e.key_bound_stderr, allowance));
        observables.push(ObservableSummary {
            observable: series.observable.clone(),
            target: series.target,
            max_quadrature_error: series.max_quadrature_error(),
            top_cutoff: var.curve.energies[n - 1],
            variance_first: var.curve.variance[0],
            variance_top: var.curve.variance[n - 1],
            running_mean_top: var.running_means[n - 1],
            densities: var
                .typical
                .iter()
                .zip(&var.chebyshev)
                .map(|(t, c)| DensitySummary {
                    epsilon: t.epsilon,
                    density: t.final_density(),
                    chebyshev_holds: c.holds(),
                    worst_margin: c.worst_margin,
                })
                .collect(),
            classical,
            key_bound,
        });
    }

    let summary = Summary {
        polygon: poly.name().map(str::to_string).unwrap_or_else(|| "custom".into()),
        mesh: MeshSummary { quality: mesh.quality(), interior_nodes },
        spectrum: SpectrumSummary {
            modes: spectrum.len(),
            e_min: spectrum.eigenvalues()[0],
            e_max: spectrum.max_energy(),
            max_residual: spectrum.max_residual(),
            orthonormality_error: spectrum.orthonormality_error(),
            weyl: weyl_check(spectrum, &poly).map_err(|e| RunError::StageFailed { stage: "solve".into(), msg: e.to_string() })?,
        },
        observables,
    };
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash(&["config", &json(cfg)]),
        stages: r.stages,
        summary,
    };
    let io = |e: std::io::Error| RunError::StageFailed { stage: "report".into(), msg: e.to_string() };
    write_json(&report, &out.join(REPORT_FILE)).map_err(io)?;
    write_json(&r.timings, &out.join(TIMINGS_FILE)).map_err(io)?;
    Ok(report)
}

/// Paths listed in a report, resolved against its output directory.
pub fn report_paths(report: &RunReport, out: &Path) -> Vec<PathBuf> {
    report.stages.iter().flat_map(|s| s.outputs.iter().map(|p| out.join(p))).collect()
}
