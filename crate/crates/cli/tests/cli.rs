use std::path::Path;
use std::process::Command;

use polyq::pipeline::{report_paths, RunReport};
use polyq::{run, ExperimentConfig, RunError};

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "polygon": "square",
            "mesh": {{"h": 0.0625}},
            "solver": {{"modes": 30, "seed": 1}},
            "observables": ["region:left-half", "cos:1:0"],
            "classical": {{"t_grid": [10, 100], "samples": 400, "seed": 2}},
            "output_dir": {:?}{extra}
        }}"#,
        dir.join("out").to_str().unwrap()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn keys(r: &RunReport) -> Vec<(String, String)> {
    r.stages.iter().map(|s| (s.name.clone(), s.key.clone())).collect()
}

fn path_of(err: RunError) -> String {
    match err {
        RunError::ConfigInvalid { path, .. } => path,
        e => panic!("expected a config error, got {e}"),
    }
}

#[test]
fn config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "analysis": {"cutoffs": [50, 200], "epsilons": [0.1]}"#);
    let text = cfg.to_json();
    let back = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
}

#[test]
fn invalid_fields_are_named() {
    let base = |poly: &str, solver: &str, obs: &str| {
        format!(r#"{{"polygon": {poly}, "mesh": {{"h": 0.1}}, "solver": {solver}, "observables": {obs}, "output_dir": "o"}}"#)
    };
    let ok_solver = r#"{"modes": 4}"#;
    let cases = [
        (base(r#""hexagon""#, ok_solver, "[]"), "polygon"),
        (base(r#""square""#, r#"{"modes": 0}"#, "[]"), "solver.modes"),
        (base(r#""square""#, r#"{"modes": 4, "tol": 1}"#, "[]"), "solver.tol"),
        (base(r#""square""#, ok_solver, r#"["const:1", "wobble:2"]"#), "observables[1]"),
        (base(r#""square""#, ok_solver, r#"["region:disk:5:5:1"]"#), "observables[0]"),
        (base(r#""square""#, r#"{"modes": 4, "colour": 3}"#, "[]"), "solver"),
    ];
    for (text, want) in cases {
        let got = path_of(ExperimentConfig::from_json(&text).unwrap_err());
        assert!(got.starts_with(want), "{text}: {got}");
    }
    let text = r#"{"polygon": "square", "mesh": {"h": "fine"}, "solver": {"modes": 4}, "output_dir": "o"}"#;
    assert_eq!(path_of(ExperimentConfig::from_json(text).unwrap_err()), "mesh.h");
}

#[test]
fn run_is_reproducible_and_cached_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = cfg.output_dir.clone();
    let first = run(&cfg).unwrap();
    let bytes = std::fs::read(out.join("report.json")).unwrap();
    for p in report_paths(&first, &out) {
        assert!(p.is_file(), "{}", p.display());
    }
    let left = &first.summary.observables[0];
    assert_eq!(left.densities.iter().find(|d| d.epsilon == 0.05).unwrap().density, 1.0);
    assert!(left.densities.iter().all(|d| d.chebyshev_holds));

    let second = run(&cfg).unwrap();
    assert_eq!(second, first);
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), bytes);
    let timings: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(out.join("timings.json")).unwrap()).unwrap();
    assert!(timings.iter().all(|t| t["cached"] == true));

    // changing the Monte Carlo sample count touches only the classical stages
    let mut more = cfg.clone();
    more.classical.as_mut().unwrap().samples = 500;
    let third = run(&more).unwrap();
    for ((name, a), (_, b)) in keys(&first).iter().zip(keys(&third)) {
        assert_eq!(a != &b, name.starts_with("classical"), "{name}");
    }

    // replacing one observable touches only its own stages
    let mut other = cfg.clone();
    other.observables[1] = polyq::config::ObservableEntry::Short("cos:0:1".into());
    let fourth = run(&other).unwrap();
    for ((name, a), (_, b)) in keys(&first).iter().zip(keys(&fourth)) {
        assert_eq!(a != &b, name.ends_with("[1]"), "{name}");
    }
}

#[test]
fn too_many_modes_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "");
    cfg.mesh.h = 0.25;
    cfg.solver.modes = 500;
    match run(&cfg) {
        Err(e @ RunError::StageFailed { .. }) => {
            assert_eq!(e.exit_code(), 3);
            assert!(e.to_string().contains("solve"));
        }
        other => panic!("{other:?}"),
    }
}

fn polyq(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polyq")).current_dir(dir).args(args).output().unwrap()
}

#[test]
fn single_stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = polyq(d, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["mesh", "--polygon", "l-shape", "--h", "0.2", "--out", "mesh.json"]);
    ok(&["solve", "--polygon", "l-shape", "--mesh", "mesh.json", "--modes", "12", "--out", "spec.json"]);
    ok(&["solve", "--polygon", "l-shape", "--h", "0.2", "--modes", "12", "--out", "spec2.json"]);
    assert_eq!(std::fs::read(d.join("spec.json")).unwrap(), std::fs::read(d.join("spec2.json")).unwrap());
    ok(&["measure", "--spectrum", "spec.json", "--region", "left-half", "--out", "mu.csv"]);
    let csv = std::fs::read_to_string(d.join("mu.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,E_n,mu_n,target"));
    assert_eq!(lines.count(), 12);
    ok(&["variance", "--series", "mu.csv", "--cutoffs", "auto", "--epsilons", "0.1,0.05,0.02", "--out", "var.json"]);
    let var: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("var.json")).unwrap()).unwrap();
    assert_eq!(var["typical"].as_array().unwrap().len(), 3);
    assert!(var["chebyshev"].as_array().unwrap().iter().all(|c| c["violations"].as_array().unwrap().is_empty()));
    ok(&[
        "classical", "--polygon", "square", "--observable", "cos:1:0", "--t", "10", "--samples", "200", "--out", "cl.json",
        "--dump-trajectory", "traj.csv", "--start", "0.3,0.2", "--phi", "0.1", "--time", "5",
    ]);
    let traj = std::fs::read_to_string(d.join("traj.csv")).unwrap();
    assert!(traj.starts_with("t,x,y,dx,dy\n0,0.3,0.2,"));
    let last: Vec<f64> = traj.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 5.0).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"polygon": "nonagon", "mesh": {"h": 0.1}, "solver": {"modes": 3}, "output_dir": "o"}"#)
        .unwrap();
    let o = polyq(d, &["run", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("polygon"));

    let o = polyq(d, &["solve", "--polygon", "square", "--h", "0.5", "--modes", "50", "--out", "s.json"]);
    assert_eq!(o.status.code(), Some(3));

    let o = polyq(d, &["mesh", "--polygon", "square"]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_polyq"))
        .current_dir(d)
        .env("POLYQ_THREADS", "many")
        .args(["mesh", "--polygon", "square", "--h", "0.5", "--out", "m.json"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_polyq"))
        .current_dir(d)
        .env("POLYQ_THREADS", "2")
        .args(["mesh", "--polygon", "square", "--h", "0.5", "--out", "m.json"])
        .output()
        .unwrap();
    assert!(o.status.success());
}
