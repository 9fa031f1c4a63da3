//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always visible. Exits
//! nonzero when a hard criterion fails; the key-bound comparison (9) is a
//! warning-level check and is reported but does not fail the target.

use std::f64::consts::PI;
use std::time::Instant;

use polyq::config::{ClassicalParams, ExperimentConfig, ObservableEntry};
use polyq::pipeline::{default_allowance, report_paths};
use polyq_core::billiard::{lemma1_functional, Billiard, PhasePoint};
use polyq_core::ergodicity::{
    chebyshev_check, decile_cutoffs, extract_typical, key_bound_check, local_weyl_average, measure_series,
    quantum_variance, BasisPolicy, MeasureSeries, EPSILONS,
};
use polyq_core::mesh;
use polyq_core::observable::ObservableSpec;
use polyq_core::polygon::{builtin, right_isosceles};
use polyq_core::quadrature::adaptive_simpson;
use polyq_core::spectral::{assemble, richardson, solve_lowest, EigenOptions, Spectrum};
use polyq_core::{Exec, Observable, RationalPolygon};

struct Report {
    hard_failures: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} {} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass && id != 9 {
            self.hard_failures.push(id);
        }
    }
}

fn obs(spec: &str, poly: &RationalPolygon) -> Observable {
    Observable::new(ObservableSpec::parse(spec).unwrap(), poly).unwrap()
}

fn solve(poly: &RationalPolygon, h: f64, refine: u32, k: usize) -> Spectrum {
    let m = mesh::build(poly, h, refine).unwrap();
    solve_lowest(&assemble(&m).unwrap(), k, &EigenOptions::default()).unwrap()
}

fn lattice(e_max: f64) -> Vec<(u32, u32, f64)> {
    let mut v = Vec::new();
    for m in 1..400u32 {
        for n in 1..400u32 {
            let e = PI * PI * (m * m + n * n) as f64;
            if e <= e_max {
                v.push((m, n, e));
            }
        }
    }
    v.sort_by(|a, b| a.2.total_cmp(&b.2));
    v
}

/// `∫|a^T|² dμ` for `cos(2πx)` on the unit square by unfolding to the torus.
fn square_cos_oracle(t: f64) -> f64 {
    let sinc2 = |phi: f64| {
        let u = 2.0 * PI * t * phi.cos();
        if u.abs() < 1e-12 {
            1.0
        } else {
            (u.sin() / u).powi(2)
        }
    };
    0.5 * 4.0 * adaptive_simpson(&sinc2, 0.0, 0.5 * PI, 1e-12) / (2.0 * PI)
}

struct Case {
    polygon: &'static str,
    poly: RationalPolygon,
    series: Vec<MeasureSeries>,
}

fn main() {
    let mut rep = Report { hard_failures: Vec::new() };
    let total = Instant::now();

    // 1. lowest 20 square modes, Richardson over two nested levels
    let t0 = Instant::now();
    let sq = builtin("square").unwrap();
    let coarse = solve(&sq, 1.0 / 32.0, 0, 20);
    let fine = solve(&sq, 1.0 / 32.0, 1, 20);
    let exact = lattice(400.0);
    let worst = (0..20)
        .map(|i| (richardson(coarse.eigenvalues()[i], fine.eigenvalues()[i]) - exact[i].2).abs() / exact[i].2)
        .fold(0.0, f64::max);
    let e1 = richardson(coarse.eigenvalues()[0], fine.eigenvalues()[0]);
    let secs = t0.elapsed().as_secs_f64();
    rep.line(
        1,
        "square spectrum oracle",
        worst <= 1e-3 && secs <= 120.0,
        format!("worst relative error {worst:.2e} over 20 modes (E_1 = {e1:.5}), {secs:.1}s"),
    );

    // 2. right isosceles triangle with legs π
    let tri = right_isosceles(PI);
    let a = solve(&tri, PI / 24.0, 0, 1).eigenvalues()[0];
    let b = solve(&tri, PI / 24.0, 1, 1).eigenvalues()[0];
    let r = richardson(a, b);
    rep.line(2, "triangle oracle", (r - 5.0).abs() / 5.0 <= 5e-3, format!("E_1 → {r:.5} (relative error {:.2e})", (r - 5.0).abs() / 5.0));

    // 3. left half of the square through the full pipeline
    let tmp = tempdir("polyq-acceptance-3");
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"polygon": "square", "mesh": {{"h": 0.015625}}, "solver": {{"modes": 200}},
            "observables": ["region:left-half"], "output_dir": {:?}}}"#,
        tmp.join("out").to_str().unwrap()
    ))
    .unwrap();
    let report = polyq::run(&cfg).unwrap();
    let series: MeasureSeries = polyq::pipeline::read_json(&tmp.join("out").join(&report.stages[2].outputs[0])).unwrap();
    let spread = series.values.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
    let d05 = report.summary.observables[0].densities.iter().find(|d| d.epsilon == 0.05).unwrap().density;
    rep.line(
        3,
        "exact equidistribution",
        series.len() == 200 && spread <= 2e-3 && d05 == 1.0,
        format!("max |μ_n − 1/2| = {spread:.2e} over {} modes, density(ε=0.05) = {d05}", series.len()),
    );
    let _ = std::fs::remove_dir_all(&tmp);

    // shared spectra
    let t0 = Instant::now();
    let big = solve(&sq, 1.0 / 64.0, 0, 1000);
    println!("    square h=1/64: 1000 modes in {:.1}s, max residual {:.1e}", t0.elapsed().as_secs_f64(), big.max_residual());
    let t0 = Instant::now();
    let lsh = builtin("l-shape").unwrap();
    let lspec = solve(&lsh, 0.03, 0, 300);
    let l_secs = t0.elapsed().as_secs_f64();
    println!("    l-shape h=0.03: 300 modes in {l_secs:.1}s");

    let measure = |spec: &Spectrum, o: &Observable| measure_series(spec, o, BasisPolicy::default(), Exec::default());
    let square_specs = ["region:left-half", "cos:1:0", "bump:0.5:0.5:0.4", "region:disk:0.45:0.55:0.2"];
    let l_specs = ["bump:0.5:0.5:0.4", "region:left-half", "region:disk:0.5:1.5:0.3"];
    let cases = [
        Case { polygon: "square", series: square_specs.iter().map(|s| measure(&big, &obs(s, &sq))).collect(), poly: sq.clone() },
        Case { polygon: "l-shape", series: l_specs.iter().map(|s| measure(&lspec, &obs(s, &lsh))).collect(), poly: lsh.clone() },
    ];

    // 4. cos(2πx) variance against the lattice
    let cosine = &cases[0].series[1];
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for l in [50.0, 100.0, 200.0, 500.0, 1000.0] {
        let e = PI * PI * l;
        let modes = lattice(e);
        let oracle = 0.25 * modes.iter().filter(|m| m.0 == 1).count() as f64 / modes.len() as f64;
        let v = quantum_variance(cosine, &[e]).unwrap().variance[0];
        worst = worst.max((v - oracle).abs() / oracle);
        details.push(format!("{l}π²: {v:.4}/{oracle:.4}"));
    }
    rep.line(4, "variance brute force", worst <= 0.1, format!("worst relative gap {worst:.3} ({})", details.join(", ")));

    // 5. variance decay on the L-shape
    let bump = &cases[1].series[0];
    let cut30 = bump.energies[29];
    let top = *bump.energies.last().unwrap();
    let v = quantum_variance(bump, &[cut30, top]).unwrap().variance;
    rep.line(
        5,
        "variance decay",
        v[1] <= 0.5 * v[0] && l_secs <= 600.0,
        format!("V(E_30) = {:.3e}, V(E_300) = {:.3e}, ratio {:.3}", v[0], v[1], v[1] / v[0]),
    );

    // 6. running means at the top cutoff
    let mut pass = true;
    let mut details = Vec::new();
    for c in &cases {
        for s in &c.series {
            let top = *s.energies.last().unwrap();
            let m = local_weyl_average(s, &[top]).unwrap()[0];
            let bound = 0.02f64.max(3.0 * s.max_quadrature_error());
            pass &= (m - s.target).abs() <= bound;
            details.push(format!("{}/{} {:+.4}", c.polygon, s.observable, m - s.target));
        }
    }
    rep.line(6, "local Weyl law", pass, details.join(", "));
    // not part of the observable set: the boundary deficit decays like E^{-1/2}
    let lcos = measure(&lspec, &obs("cos:1:0", &lsh));
    let m = local_weyl_average(&lcos, &[*lcos.energies.last().unwrap()]).unwrap()[0];
    println!("    info: l-shape/cos:1:0 running mean offset {:+.4} at 300 modes", m - lcos.target);

    // 7. decay of the classical time-average functional
    let t0 = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (name, poly) in [("square", sq.clone()), ("right-isosceles", builtin("right-isosceles").unwrap())] {
        let o = obs("cos:1:0", &poly);
        assert!(o.mean().abs() < 1e-12);
        let est: Vec<_> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&t| lemma1_functional(&poly, &o, t, 10_000, 7, Exec::default()).unwrap())
            .collect();
        pass &= est.windows(2).all(|w| w[1].estimate < w[0].estimate) && est[2].estimate <= 0.02;
        let vals: Vec<String> = est.iter().map(|e| format!("{:.2e}", e.estimate)).collect();
        let mut d = format!("{name} [{}]", vals.join(", "));
        if name == "square" {
            let oracle = square_cos_oracle(10.0);
            pass &= (est[0].estimate - oracle).abs() <= 5.0 * est[0].stderr + 0.05 * oracle;
            d.push_str(&format!(" (torus oracle at T=10: {oracle:.2e})"));
        }
        details.push(d);
    }
    let secs = t0.elapsed().as_secs_f64();
    rep.line(7, "time-average decay", pass && secs <= 300.0, format!("{}, {secs:.1}s", details.join("; ")));

    // 8. direction orbits over 10⁶ bounces
    let mut pass = true;
    let mut details = Vec::new();
    for name in ["square", "l-shape", "pi8-triangle"] {
        let poly = builtin(name).unwrap();
        let ear = poly.ear_triangles().unwrap()[0];
        let vx = poly.vertices();
        let start = PhasePoint::from_phase((vx[ear[0]] + vx[ear[1]] + vx[ear[2]]) * (1.0 / 3.0), 0.1234);
        let orbit = poly.reflection_group().unwrap().orbit(start.direction);
        let mut worst = 0.0f64;
        let mut violations = 0u64;
        let res = Billiard::new(&poly).bounce_directions(&start, 1_000_000, |d| {
            let dist = orbit.iter().map(|o| o.dist(d)).fold(f64::INFINITY, f64::min);
            worst = worst.max(dist);
            if dist > 1e-9 {
                violations += 1;
            }
        });
        pass &= res.is_ok() && violations == 0;
        details.push(format!("{name}: |orbit| = {}, worst {worst:.1e}, {violations} violations{}", orbit.len(), if res.is_err() { " (flow error)" } else { "" }));
    }
    rep.line(8, "direction-orbit invariance", pass, details.join("; "));

    // 9. key bound at T = 1000 (warning level)
    let mut all = true;
    let mut details = Vec::new();
    for c in &cases {
        for (i, s) in c.series.iter().enumerate() {
            let spec = if c.polygon == "square" { square_specs[i] } else { l_specs[i] };
            let cl = lemma1_functional(&c.poly, &obs(spec, &c.poly), 1000.0, 10_000, 9, Exec::default()).unwrap();
            let curve = quantum_variance(s, &decile_cutoffs(&s.energies, 10)).unwrap();
            let top = *curve.variance.last().unwrap();
            let k = key_bound_check(&curve, cl.key_bound, cl.key_bound_stderr, default_allowance(s, top, 1e-8));
            all &= k.pass;
            details.push(format!(
                "{}/{} {} (V {:.2e} vs {:.2e} ± {:.1e})",
                c.polygon,
                s.observable,
                if k.pass { "ok" } else { "warn" },
                k.top_variance,
                k.classical,
                k.classical_stderr
            ));
        }
    }
    rep.line(9, "key-bound soft check", all, details.join(", "));

    // 10. Chebyshev on every series
    let mut checked = 0;
    let mut failed = Vec::new();
    for c in &cases {
        for s in c.series.iter().chain(std::iter::once(&series)) {
            for eps in EPSILONS {
                let t = extract_typical(s, eps).unwrap();
                let ch = chebyshev_check(s, &t);
                checked += ch.checked;
                if !ch.holds() {
                    failed.push(format!("{}/{} ε={eps}", c.polygon, s.observable));
                }
            }
        }
    }
    rep.line(10, "Chebyshev consistency", failed.is_empty(), format!("{checked} inequalities checked, failures: {failed:?}"));

    // 11. byte-identical reports across runs and thread counts
    let tmp = tempdir("polyq-acceptance-11");
    let mut cfg = ExperimentConfig::from_json(&format!(
        r#"{{"polygon": "l-shape", "mesh": {{"h": 0.04}}, "solver": {{"modes": 60, "seed": 5}},
            "observables": ["bump:0.5:0.5:0.4", "region:left-half"], "output_dir": {:?}}}"#,
        tmp.join("out").to_str().unwrap()
    ))
    .unwrap();
    cfg.classical = Some(ClassicalParams { t_grid: vec![10.0, 100.0], samples: 2000, seed: 4 });
    cfg.observables.push(ObservableEntry::Short("cos:1:0".into()));
    let snapshot = |threads: usize| {
        let _ = std::fs::remove_dir_all(&tmp);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool.install(|| polyq::run(&cfg)).unwrap();
        let out = tmp.join("out");
        let mut files = vec![std::fs::read(out.join("report.json")).unwrap()];
        files.extend(report_paths(&report, &out).iter().map(|p| std::fs::read(p).unwrap()));
        files
    };
    let one = snapshot(1);
    let two = snapshot(2);
    let again = snapshot(1);
    let cached = pool_cached(&cfg);
    let _ = std::fs::remove_dir_all(&tmp);
    rep.line(
        11,
        "determinism",
        one == two && one == again && cached == one[0],
        format!("{} files compared across 1 and 2 threads and a cached rerun", one.len()),
    );

    println!("    total {:.1}s", total.elapsed().as_secs_f64());
    if !rep.hard_failures.is_empty() {
        println!("failed criteria: {:?}", rep.hard_failures);
        std::process::exit(1);
    }
}

/// Reruns on top of the existing outputs (all stages cached) and returns
/// the report bytes.
fn pool_cached(cfg: &ExperimentConfig) -> Vec<u8> {
    polyq::run(cfg).unwrap();
    std::fs::read(cfg.output_dir.join("report.json")).unwrap()
}

fn tempdir(name: &str) -> std::path::PathBuf {
    let p = std::env::temp_dir().join(format!("{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}
