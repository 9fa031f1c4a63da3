//! Quadrature rules: triangle rules, Gauss–Legendre and adaptive Simpson.

use crate::geom::{triangle_area, Vec2};

/// Barycentric point and weight (weights sum to 1).
pub type BaryPoint = ([f64; 3], f64);

/// Six-point symmetric rule exact for polynomials of degree 4.
pub fn degree4_rule() -> [BaryPoint; 6] {
    const A: f64 = 0.445_948_490_915_965;
    const WA: f64 = 0.223_381_589_678_011;
    const B: f64 = 0.091_576_213_509_771;
    const WB: f64 = 0.109_951_743_655_322;
    [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Collapsed (Duffy) tensor Gauss rule of order `n` on a triangle.
pub fn integrate_triangle<F: Fn(Vec2) -> f64>(a: Vec2, b: Vec2, c: Vec2, n: usize, f: &F) -> f64 {
    let (x, w) = gauss_legendre(n);
    let area = triangle_area(a, b, c).abs();
    let mut s = 0.0;
    for (i, &u) in x.iter().enumerate() {
        let u = 0.5 * (u + 1.0);
        for (j, &v) in x.iter().enumerate() {
            let v = 0.5 * (v + 1.0);
            // (u, v) in the unit square → barycentric (u(1-v), uv) scaled
            let l1 = u * (1.0 - v);
            let l2 = u * v;
            let p = a + (b - a) * l1 + (c - a) * l2;
            s += w[i] * w[j] * 0.25 * u * f(p);
        }
    }
    2.0 * area * s
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    // one forced split so symmetric integrands are not accepted on 3 points
    let left = {
        let lm = 0.5 * (a + m);
        let flm = f(lm);
        rec(f, a, m, fa, flm, fm, (m - a) / 6.0 * (fa + 4.0 * flm + fm), 0.5 * tol, 40)
    };
    let right = {
        let rm = 0.5 * (m + b);
        let frm = f(rm);
        rec(f, m, b, fm, frm, fb, (b - m) / 6.0 * (fm + 4.0 * frm + fb), 0.5 * tol, 40)
    };
    left + right
}
