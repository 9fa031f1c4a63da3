//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polyq_core::billiard::{lemma1_functional, Billiard, FlowError, PhasePoint, Trajectory};
use polyq_core::ergodicity::measure_series;
use polyq_core::mesh::{self, TriangleMesh};
use polyq_core::observable::ObservableSpec;
use polyq_core::spectral::{assemble, solve_lowest, EigenOptions};
use polyq_core::{Exec, Observable, RationalPolygon, Vec2};

use crate::config::{parse_list, resolve_polygon, Cutoffs, ExperimentConfig};
use crate::pipeline::{
    analyse, basis_policy, read_json, read_series_csv, resolve_cutoffs, write_json, write_series_csv, SpectrumFile,
};
use crate::RunError;

#[derive(Debug, Parser)]
#[command(name = "polyq", version, about = "Quantum ergodicity experiments on rational polygons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a full experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Triangulate a polygon and write the mesh as JSON.
    Mesh {
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the lowest Dirichlet modes and write them as JSON.
    Solve {
        #[command(flatten)]
        geometry: Geometry,
        /// Use this mesh instead of generating one.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        modes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-mode matrix elements as CSV (n,E_n,mu_n,target).
    Measure {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long, conflicts_with = "observable", required_unless_present = "observable")]
        region: Option<String>,
        #[arg(long)]
        observable: Option<String>,
        #[arg(long, value_enum, default_value_t = Basis::Adapted)]
        basis: Basis,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantum variance, running means and typical subsequences of a series.
    Variance {
        #[arg(long)]
        series: PathBuf,
        /// `auto` or comma-separated energies.
        #[arg(long, default_value = "auto")]
        cutoffs: String,
        #[arg(long, default_value = "0.1,0.05,0.02")]
        epsilons: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Liouville Monte Carlo of the classical time-average functionals.
    Classical {
        #[arg(long)]
        polygon: String,
        #[arg(long)]
        observable: String,
        /// Comma-separated averaging times.
        #[arg(long, default_value = "10,100,1000")]
        t: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write one trajectory as CSV (t,x,y,dx,dy).
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
        /// Start point `X,Y` of the dumped trajectory.
        #[arg(long)]
        start: Option<String>,
        /// Direction of the dumped trajectory in turns.
        #[arg(long, default_value_t = 0.1234)]
        phi: f64,
        #[arg(long, default_value_t = 20.0)]
        time: f64,
    },
}

#[derive(Debug, Args)]
pub struct Geometry {
    /// Builtin name or path to a polygon JSON file.
    #[arg(long)]
    pub polygon: String,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub refine: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Basis {
    Adapted,
    AsSolved,
}

fn config_err(path: &str, msg: impl ToString) -> RunError {
    RunError::ConfigInvalid { path: path.into(), msg: msg.to_string() }
}

fn stage_err(stage: &str, msg: impl ToString) -> RunError {
    RunError::StageFailed { stage: stage.into(), msg: msg.to_string() }
}

impl Geometry {
    fn polygon(&self) -> Result<RationalPolygon, RunError> {
        resolve_polygon(&self.polygon).map_err(|e| config_err("--polygon", e))
    }

    fn mesh(&self, poly: &RationalPolygon) -> Result<TriangleMesh, RunError> {
        let h = self.h.ok_or_else(|| config_err("--h", "required unless --mesh is given"))?;
        if !(h.is_finite() && h > 0.0) {
            return Err(config_err("--h", format!("must be positive, got {h}")));
        }
        mesh::build(poly, h, self.refine).map_err(|e| stage_err("mesh", e))
    }
}

pub fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = crate::run(&cfg)?;
            let out = cfg.output_dir.join(crate::pipeline::REPORT_FILE);
            eprintln!("wrote {} ({} stages)", out.display(), report.stages.len());
            Ok(())
        }
        Command::Mesh { geometry, out } => {
            let poly = geometry.polygon()?;
            let m = geometry.mesh(&poly)?;
            write_json(&m, &out).map_err(|e| stage_err("mesh", e))
        }
        Command::Solve { geometry, mesh, modes, seed, tol, out } => {
            let poly = geometry.polygon()?;
            let m = match mesh {
                Some(p) => read_json::<TriangleMesh>(&p).map_err(|e| config_err("--mesh", e))?,
                None => geometry.mesh(&poly)?,
            };
            if !(tol > 0.0 && tol <= 1e-4) {
                return Err(config_err("--tol", format!("must be in (0, 1e-4], got {tol}")));
            }
            let opts = EigenOptions { seed, tol, ..EigenOptions::default() };
            let sys = assemble(&m).map_err(|e| stage_err("solve", e))?;
            let spectrum = solve_lowest(&sys, modes, &opts).map_err(|e| stage_err("solve", e))?;
            write_json(&SpectrumFile { polygon: poly, spectrum }, &out).map_err(|e| stage_err("solve", e))
        }
        Command::Measure { spectrum, region, observable, basis, out } => {
            let sf: SpectrumFile = read_json(&spectrum).map_err(|e| config_err("--spectrum", e))?;
            let (flag, spec) = match (region, observable) {
                (Some(r), _) => ("--region", format!("region:{r}")),
                (None, Some(o)) => ("--observable", o),
                (None, None) => unreachable!("clap requires one"),
            };
            let spec = ObservableSpec::parse(&spec).map_err(|e| config_err(flag, e))?;
            let obs = Observable::new(spec, &sf.polygon).map_err(|e| config_err(flag, e))?;
            let policy = basis_policy(match basis {
                Basis::Adapted => Some(1e-8),
                Basis::AsSolved => None,
            });
            let series = measure_series(&sf.spectrum, &obs, policy, Exec::default());
            write_series_csv(&series, &out).map_err(|e| stage_err("measure", e))
        }
        Command::Variance { series, cutoffs, epsilons, out } => {
            let s = read_series_csv(&series).map_err(|e| config_err("--series", e))?;
            let cutoffs = Cutoffs::parse(&cutoffs).map_err(|e| config_err("--cutoffs", e))?;
            let epsilons = parse_list(&epsilons).map_err(|e| config_err("--epsilons", e))?;
            let cutoffs = resolve_cutoffs(&cutoffs, &s.energies);
            let r = analyse(&s, &cutoffs, &epsilons).map_err(|e| stage_err("variance", e))?;
            write_json(&r, &out).map_err(|e| stage_err("variance", e))
        }
        Command::Classical { polygon, observable, t, samples, seed, out, dump_trajectory, start, phi, time } => {
            let poly = resolve_polygon(&polygon).map_err(|e| config_err("--polygon", e))?;
            let spec = ObservableSpec::parse(&observable).map_err(|e| config_err("--observable", e))?;
            let obs = Observable::new(spec, &poly).map_err(|e| config_err("--observable", e))?;
            let ts = parse_list(&t).map_err(|e| config_err("--t", e))?;
            if ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(config_err("--t", "times must be positive"));
            }
            if let Some(path) = dump_trajectory {
                let p = match start {
                    Some(s) => match parse_list(&s).map_err(|e| config_err("--start", e))?.as_slice() {
                        &[x, y] => Vec2::new(x, y),
                        _ => return Err(config_err("--start", "expected X,Y")),
                    },
                    None => interior_point(&poly),
                };
                dump(&poly, PhasePoint::from_phase(p, phi), time, &path)?;
            }
            let estimates = ts
                .iter()
                .map(|&t| lemma1_functional(&poly, &obs, t, samples, seed, Exec::default()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    FlowError::Invalid(m) => config_err("--samples", m),
                    e => stage_err("classical", e),
                })?;
            write_json(&estimates, &out).map_err(|e| stage_err("classical", e))
        }
    }
}

fn interior_point(poly: &RationalPolygon) -> Vec2 {
    let ear = poly.ear_triangles().expect("validated polygons triangulate")[0];
    let v = poly.vertices();
    (v[ear[0]] + v[ear[1]] + v[ear[2]]) * (1.0 / 3.0)
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,x,y,dx,dy\n");
    let mut t = 0.0;
    for seg in &traj.segments {
        s.push_str(&format!("{},{},{},{},{}\n", t, seg.start.x, seg.start.y, seg.direction.x, seg.direction.y));
        t += seg.start.dist(seg.end);
    }
    if let Some(last) = traj.segments.last() {
        s.push_str(&format!("{},{},{},{},{}\n", t, last.end.x, last.end.y, last.direction.x, last.direction.y));
    }
    s
}

fn dump(poly: &RationalPolygon, p: PhasePoint, time: f64, path: &std::path::Path) -> Result<(), RunError> {
    let write = |traj: &Trajectory| std::fs::write(path, trajectory_csv(traj)).map_err(|e| stage_err("classical", e));
    match Billiard::new(poly).evolve(&p, time) {
        Ok((_, traj)) => write(&traj),
        Err(FlowError::VertexEncounter { vertex, time, partial }) => {
            write(&partial)?;
            Err(stage_err("classical", format!("trajectory struck vertex {vertex} at t = {time}; partial path written")))
        }
        Err(e @ (FlowError::OutsideDomain(_) | FlowError::StuckAtBoundary { .. })) => Err(config_err("--start", e)),
        Err(e) => Err(stage_err("classical", e)),
    }
}
