use polyq_core::billiard::{lemma1_functional, Billiard, PhasePoint};
use polyq_core::observable::ObservableSpec;
use polyq_core::polygon::builtin;
use polyq_core::quadrature::adaptive_simpson;
use polyq_core::{Exec, Observable, Vec2};
use std::f64::consts::PI;

fn obs(spec: &str, poly: &polyq_core::RationalPolygon) -> Observable {
    Observable::new(ObservableSpec::parse(spec).unwrap(), poly).unwrap()
}

#[test]
fn golden_slope_equidistributes_on_square() {
    let sq = builtin("square").unwrap();
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    let p = PhasePoint::new(Vec2::new(0.2, 0.3), Vec2::new(1.0, golden));
    let a = Billiard::new(&sq).time_average(&obs("cos:1:0", &sq), &p, 1e4).unwrap();
    assert!(a.abs() < 5e-3, "{a}");
}

#[test]
fn time_reversal_returns_to_start() {
    for name in ["l-shape", "pi8-triangle", "equilateral"] {
        let poly = builtin(name).unwrap();
        let b = Billiard::new(&poly);
        let start = PhasePoint::from_phase(poly.vertices()[0] * 0.6 + poly.vertices()[1] * 0.2 + poly.vertices()[2] * 0.2, 0.4321);
        let t = 50.0;
        let (end, _) = b.evolve(&start, t).unwrap();
        let (back, _) = b.evolve(&end.reversed(), t).unwrap();
        assert!(back.position.dist(start.position) < 1e-8 * t, "{name}");
        assert!(back.direction.dist(start.direction * -1.0) < 1e-8 * t, "{name}");
    }
}

#[test]
fn trajectory_directions_stay_in_group_orbit() {
    for name in ["square", "l-shape", "pi8-triangle", "equilateral"] {
        let poly = builtin(name).unwrap();
        let group = poly.reflection_group().unwrap();
        let b = Billiard::new(&poly);
        let ear = poly.ear_triangles().unwrap()[0];
        let v = poly.vertices();
        let c = (v[ear[0]] + v[ear[1]] + v[ear[2]]) * (1.0 / 3.0);
        let start = PhasePoint::from_phase(c, 0.1234);
        let orbit = group.orbit(start.direction);
        let (_, traj) = b.evolve(&start, 200.0).unwrap();
        for seg in &traj.segments {
            assert!((seg.direction.norm() - 1.0).abs() < 1e-12);
            let d = orbit.iter().map(|o| o.dist(seg.direction)).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9, "{name}: {d}");
        }
    }
}

/// `∫|a^T|² dμ` for `cos(2πx)` on the unit square, by unfolding to the
/// torus: `a^T = cos(2πx₀)·sin(2πTc)/(2πTc)` with `c = cos φ`.
fn square_oracle(t: f64) -> f64 {
    let sinc2 = |phi: f64| {
        let u = 2.0 * PI * t * phi.cos();
        if u.abs() < 1e-12 { 1.0 } else { (u.sin() / u).powi(2) }
    };
    // four symmetric quarter periods
    let quarter = adaptive_simpson(&sinc2, 0.0, 0.5 * PI, 1e-12);
    0.5 * 4.0 * quarter / (2.0 * PI)
}

#[test]
fn time_average_functional_matches_torus_unfolding() {
    let sq = builtin("square").unwrap();
    let a = obs("cos:1:0", &sq);
    // a^T² is heavy-tailed (near-vertical directions dominate), so the
    // standard error is only trustworthy with many samples
    for (t, n) in [(10.0, 10_000), (100.0, 50_000)] {
        let e = lemma1_functional(&sq, &a, t, n, 11, Exec::default()).unwrap();
        let exact = square_oracle(t);
        assert!((e.estimate - exact).abs() <= 4.0 * e.stderr, "T={t}: {} ± {} vs {exact}", e.estimate, e.stderr);
    }
    let e = lemma1_functional(&sq, &a, 1000.0, 10_000, 12, Exec::default()).unwrap();
    assert!(e.estimate <= 0.01);
}

#[test]
fn liouville_mean_of_time_average_is_the_space_mean() {
    let l = builtin("l-shape").unwrap();
    let a = obs("bump:0.5:0.5:0.4", &l);
    let e = lemma1_functional(&l, &a, 10.0, 10_000, 5, Exec::default()).unwrap();
    assert!((e.mean_average - a.mean()).abs() <= 4.0 * e.mean_average_stderr);
    assert_eq!(e.abar, a.mean());
}
