//! Quantum observables of the computed eigenfunctions: matrix elements
//! `⟨a₀ψ_n, ψ_n⟩` (region masses `μ_n(A)` for indicators), the quantum
//! variance, running local Weyl means and the density-one subsequence of
//! modes that are close to equidistributed.
//!
//! An observable is discretised once per mesh as a 3×3 weight matrix per
//! triangle, `W_T[i][j] ≈ ∫_T a₀ φ_i φ_j`, so that every matrix element is a
//! cheap quadratic form in the nodal coefficients. Smooth observables use a
//! degree-4 rule (error estimated against a 4-fold subdivided rule); regions
//! are integrated exactly on triangles away from the region boundary and by
//! recursive subdivision on straddling ones, the unresolved sub-triangles
//! providing the error estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geom::Vec2;
use crate::mesh::TriangleMesh;
use crate::observable::{Kind, Observable};
use crate::quadrature::degree4_rule;
use crate::region::{Cover, Region};
use crate::spectral::Spectrum;

/// Subdivision depth for triangles straddling a region boundary.
pub const REGION_DEPTH: u32 = 6;
/// Slack in the Chebyshev inequality check.
pub const CHEBYSHEV_SLACK: f64 = 1e-12;
/// Fixed ε schedule used in reports.
pub const EPSILONS: [f64; 3] = [0.1, 0.05, 0.02];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicityError {
    #[error("mode {n} out of range (spectrum has {len})")]
    ModeOutOfRange { n: usize, len: usize },
    #[error("no modes below cutoff {0}")]
    EmptyWindow(f64),
    #[error("cutoff {cutoff} exceeds the largest computed energy {max}")]
    AboveSpectrum { cutoff: f64, max: f64 },
    #[error("cutoffs must be finite and strictly increasing")]
    InvalidCutoffs,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("series is empty")]
    EmptySeries,
}

type Mat3 = [[f64; 3]; 3];

const ZERO3: Mat3 = [[0.0; 3]; 3];
const IDENTITY_BARY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn add3(a: &mut Mat3, b: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] += b[i][j];
        }
    }
}

fn local_mass(area: f64) -> Mat3 {
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

/// `Pᵀ M_S P`: mass of a sub-triangle with corner barycentrics `p` (rows),
/// expressed in the parent's hat functions.
fn sub_mass(p: &Mat3, area: f64) -> Mat3 {
    let m = local_mass(area);
    let mut out = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += p[k][i] * m[k][l] * p[l][j];
                }
            }
            out[i][j] = s;
        }
    }
    out
}

fn children(bary: &Mat3, pts: &[Vec2; 3]) -> [(Mat3, [Vec2; 3]); 4] {
    let mid = |a: usize, b: usize| -> ([f64; 3], Vec2) {
        (
            [
                0.5 * (bary[a][0] + bary[b][0]),
                0.5 * (bary[a][1] + bary[b][1]),
                0.5 * (bary[a][2] + bary[b][2]),
            ],
            pts[a].midpoint(pts[b]),
        )
    };
    let (b01, p01) = mid(0, 1);
    let (b12, p12) = mid(1, 2);
    let (b20, p20) = mid(2, 0);
    [
        ([bary[0], b01, b20], [pts[0], p01, p20]),
        ([b01, bary[1], b12], [p01, pts[1], p12]),
        ([b20, b12, bary[2]], [p20, p12, pts[2]]),
        ([b01, b12, b20], [p01, p12, p20]),
    ]
}

fn smooth_rule(obs: &Observable, pts: &[Vec2; 3], bary: &Mat3, area: f64) -> Mat3 {
    let mut w = ZERO3;
    for (mu, wq) in degree4_rule() {
        let x = pts[0] * mu[0] + pts[1] * mu[1] + pts[2] * mu[2];
        let lam: [f64; 3] = std::array::from_fn(|i| mu[0] * bary[0][i] + mu[1] * bary[1][i] + mu[2] * bary[2][i]);
        let f = area * wq * obs.eval(x);
        for i in 0..3 {
            for j in 0..3 {
                w[i][j] += f * lam[i] * lam[j];
            }
        }
    }
    w
}

fn region_weights(region: &Region, pts: [Vec2; 3], bary: Mat3, area: f64, depth: u32, w: &mut Mat3, unsure: &mut Mat3) {
    match region.classify(pts) {
        Cover::Inside => add3(w, &sub_mass(&bary, area)),
        Cover::Outside => {}
        Cover::Straddle if depth == REGION_DEPTH => {
            let m = sub_mass(&bary, area);
            let c = (pts[0] + pts[1] + pts[2]) * (1.0 / 3.0);
            if region.contains(c) {
                add3(w, &m);
            }
            add3(unsure, &m);
        }
        Cover::Straddle => {
            for (b, p) in children(&bary, &pts) {
                region_weights(region, p, b, area / 4.0, depth + 1, w, unsure);
            }
        }
    }
}

/// An observable discretised on a mesh.
#[derive(Debug, Clone)]
pub struct ElementWeights {
    triangles: Vec<[usize; 3]>,
    weights: Vec<Mat3>,
    /// Per-triangle error form; positive semidefinite for regions.
    errors: Vec<Mat3>,
    error_is_mass: bool,
}

impl ElementWeights {
    pub fn new(mesh: &TriangleMesh, obs: &Observable, exec: Exec) -> Self {
        let per = exec.map(mesh.triangles().len(), |t| {
            let pts = mesh.corners(t);
            let area = 0.5 * (pts[1] - pts[0]).cross(pts[2] - pts[0]);
            match &obs.kind {
                Kind::Constant(c) => {
                    let mut m = local_mass(area);
                    m.iter_mut().flatten().for_each(|x| *x *= c);
                    (m, ZERO3)
                }
                Kind::Indicator(region) => {
                    let mut w = ZERO3;
                    let mut unsure = ZERO3;
                    region_weights(region, pts, IDENTITY_BARY, area, 0, &mut w, &mut unsure);
                    (w, unsure)
                }
                _ => {
                    let coarse = smooth_rule(obs, &pts, &IDENTITY_BARY, area);
                    let mut fine = ZERO3;
                    for (b, p) in children(&IDENTITY_BARY, &pts) {
                        add3(&mut fine, &smooth_rule(obs, &p, &b, area / 4.0));
                    }
                    let mut err = ZERO3;
                    for i in 0..3 {
                        for j in 0..3 {
                            err[i][j] = fine[i][j] - coarse[i][j];
                        }
                    }
                    (coarse, err)
                }
            }
        });
        let (weights, errors) = per.into_iter().unzip();
        Self {
            triangles: mesh.triangles().to_vec(),
            weights,
            errors,
            error_is_mass: obs.region().is_some(),
        }
    }

    fn form(mats: &[Mat3], tris: &[[usize; 3]], a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, t) in mats.iter().zip(tris) {
            let u = [a[t[0]], a[t[1]], a[t[2]]];
            let v = [b[t[0]], b[t[1]], b[t[2]]];
            for i in 0..3 {
                s += u[i] * (w[i][0] * v[0] + w[i][1] * v[1] + w[i][2] * v[2]);
            }
        }
        s
    }

    /// `∫ a₀ u v` for nodal vectors `u`, `v`.
    pub fn element(&self, u: &[f64], v: &[f64]) -> f64 {
        Self::form(&self.weights, &self.triangles, u, v)
    }

    /// Quadrature error estimate for `∫ a₀ u²`.
    pub fn error(&self, u: &[f64]) -> f64 {
        let e = Self::form(&self.errors, &self.triangles, u, u);
        if self.error_is_mass {
            e.max(0.0)
        } else {
            e.abs()
        }
    }
}

/// `⟨a₀ψ_n, ψ_n⟩` for mode `n` (0-based).
pub fn matrix_element(spectrum: &Spectrum, obs: &Observable, n: usize) -> Result<f64, ErgodicityError> {
    if n >= spectrum.len() {
        return Err(ErgodicityError::ModeOutOfRange { n, len: spectrum.len() });
    }
    let w = ElementWeights::new(spectrum.mesh(), obs, Exec::default());
    Ok(w.element(spectrum.vector(n), spectrum.vector(n)))
}

/// How eigenvectors inside numerically degenerate clusters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BasisPolicy {
    /// Use the solver's (arbitrary) basis.
    AsSolved,
    /// Within each cluster of eigenvalues with relative spacing ≤ `rel_tol`,
    /// diagonalise the observable so the values do not depend on the basis
    /// the solver happened to return.
    ObservableAdapted { rel_tol: f64 },
}

impl Default for BasisPolicy {
    fn default() -> Self {
        BasisPolicy::ObservableAdapted { rel_tol: 1e-8 }
    }
}

/// Consecutive index ranges of numerically equal eigenvalues.
pub fn degenerate_clusters(energies: &[f64], rel_tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        if i == energies.len() || energies[i] - energies[i - 1] > rel_tol * energies[i].abs() {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// `μ_n` (or `⟨a₀ψ_n,ψ_n⟩`) for every mode of a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSeries {
    pub observable: String,
    /// `ā`: the area fraction for regions, the mean otherwise.
    pub target: f64,
    pub energies: Vec<f64>,
    pub values: Vec<f64>,
    pub quadrature_errors: Vec<f64>,
    pub policy: BasisPolicy,
}

impl MeasureSeries {
    /// A series from precomputed values (no quadrature error).
    pub fn from_values(observable: &str, target: f64, energies: Vec<f64>, values: Vec<f64>) -> Self {
        let n = values.len();
        assert_eq!(energies.len(), n, "one energy per value");
        Self {
            observable: observable.to_string(),
            target,
            energies,
            values,
            quadrature_errors: vec![0.0; n],
            policy: BasisPolicy::AsSolved,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_quadrature_error(&self) -> f64 {
        self.quadrature_errors.iter().copied().fold(0.0, f64::max)
    }

    /// `#{n : E_n ≤ e}`.
    pub fn count_below(&self, e: f64) -> usize {
        self.energies.partition_point(|&x| x <= e)
    }

    fn window_counts(&self, cutoffs: &[f64]) -> Result<Vec<usize>, ErgodicityError> {
        if cutoffs.iter().any(|c| !c.is_finite()) || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ErgodicityError::InvalidCutoffs);
        }
        let max = self.energies.last().copied().ok_or(ErgodicityError::EmptySeries)?;
        cutoffs
            .iter()
            .map(|&c| {
                if c > max {
                    return Err(ErgodicityError::AboveSpectrum { cutoff: c, max });
                }
                match self.count_below(c) {
                    0 => Err(ErgodicityError::EmptyWindow(c)),
                    n => Ok(n),
                }
            })
            .collect()
    }
}

pub fn measure_series(spectrum: &Spectrum, obs: &Observable, policy: BasisPolicy, exec: Exec) -> MeasureSeries {
    let w = ElementWeights::new(spectrum.mesh(), obs, exec);
    let energies = spectrum.eigenvalues().to_vec();
    let clusters = match policy {
        BasisPolicy::AsSolved => (0..energies.len()).map(|i| i..i + 1).collect(),
        BasisPolicy::ObservableAdapted { rel_tol } => degenerate_clusters(&energies, rel_tol),
    };
    let per = exec.map(clusters.len(), |c| {
        let r = clusters[c].clone();
        let errs: Vec<f64> = r.clone().map(|i| w.error(spectrum.vector(i))).collect();
        if r.len() == 1 {
            let v = spectrum.vector(r.start);
            return (vec![w.element(v, v)], errs);
        }
        let k = r.len();
        let g = DMatrix::from_fn(k, k, |a, b| w.element(spectrum.vector(r.start + a), spectrum.vector(r.start + b)));
        let g = (&g + g.transpose()) * 0.5;
        let mut vals: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        let worst = errs.iter().copied().fold(0.0, f64::max);
        (vals, vec![worst; k])
    });
    let mut values = Vec::with_capacity(energies.len());
    let mut quadrature_errors = Vec::with_capacity(energies.len());
    for (v, e) in per {
        values.extend(v);
        quadrature_errors.extend(e);
    }
    MeasureSeries {
        observable: obs.spec().label(),
        target: obs.mean(),
        energies,
        values,
        quadrature_errors,
        policy,
    }
}

/// `V(A, E)` at each cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub energies: Vec<f64>,
    pub variance: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `V(A,E) = (1/N(E)) Σ_{E_n ≤ E} |μ_n − ā|²`.
pub fn quantum_variance(series: &MeasureSeries, cutoffs: &[f64]) -> Result<VarianceCurve, ErgodicityError> {
    let counts = series.window_counts(cutoffs)?;
    let variance = counts.iter().map(|&n| variance_of_first(series, n)).collect();
    Ok(VarianceCurve { energies: cutoffs.to_vec(), variance, counts })
}

fn variance_of_first(series: &MeasureSeries, n: usize) -> f64 {
    series.values[..n].iter().map(|v| (v - series.target).powi(2)).sum::<f64>() / n as f64
}

/// Running means `(1/N(E)) Σ_{E_n ≤ E} μ_n`.
pub fn local_weyl_average(series: &MeasureSeries, cutoffs: &[f64]) -> Result<Vec<f64>, ErgodicityError> {
    let counts = series.window_counts(cutoffs)?;
    Ok(counts
        .iter()
        .map(|&n| series.values[..n].iter().sum::<f64>() / n as f64)
        .collect())
}

/// Cutoffs at the energies of modes `⌈j·len/parts⌉`, `j = 1..=parts`
/// (deduplicated).
pub fn decile_cutoffs(energies: &[f64], parts: usize) -> Vec<f64> {
    let len = energies.len();
    let mut out: Vec<f64> = Vec::new();
    for j in 1..=parts {
        let idx = (j * len).div_ceil(parts);
        if idx == 0 {
            continue;
        }
        let e = energies[idx - 1];
        if out.last().is_none_or(|&l| e > l) {
            out.push(e);
        }
    }
    out
}

/// Modes within `ε` of the target, with their running density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalSubsequence {
    pub epsilon: f64,
    /// 1-based mode numbers.
    pub indices: Vec<usize>,
    /// `density[N-1] = #{n_j ≤ N}/N`.
    pub density: Vec<f64>,
}

impl TypicalSubsequence {
    pub fn final_density(&self) -> f64 {
        self.density.last().copied().unwrap_or(1.0)
    }
}

pub fn extract_typical(series: &MeasureSeries, epsilon: f64) -> Result<TypicalSubsequence, ErgodicityError> {
    if !(epsilon > 0.0) {
        return Err(ErgodicityError::InvalidEpsilon(epsilon));
    }
    let mut indices = Vec::new();
    let mut density = Vec::with_capacity(series.len());
    for (i, v) in series.values.iter().enumerate() {
        if (v - series.target).abs() <= epsilon {
            indices.push(i + 1);
        }
        density.push(indices.len() as f64 / (i + 1) as f64);
    }
    Ok(TypicalSubsequence { epsilon, indices, density })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevCheck {
    pub epsilon: f64,
    /// Cutoff counts `N` at which the inequality was evaluated.
    pub checked: usize,
    /// `min_N (V(E_N)/ε² + slack − (1 − density(N)))`.
    pub worst_margin: f64,
    pub violations: Vec<usize>,
}

impl ChebyshevCheck {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `1 − density(N) ≤ V(A, E_N)/ε²` at every cutoff `E_N`; at tied
/// energies the window holds the whole tie, so `N` runs over window sizes.
pub fn chebyshev_check(series: &MeasureSeries, typical: &TypicalSubsequence) -> ChebyshevCheck {
    let eps2 = typical.epsilon * typical.epsilon;
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut sum = 0.0;
    for n in 1..=series.len() {
        sum += (series.values[n - 1] - series.target).powi(2);
        if n < series.len() && series.energies[n] <= series.energies[n - 1] {
            continue;
        }
        checked += 1;
        let v = sum / n as f64;
        let margin = v / eps2 + CHEBYSHEV_SLACK - (1.0 - typical.density[n - 1]);
        worst = worst.min(margin);
        if margin < 0.0 {
            violations.push(n);
        }
    }
    ChebyshevCheck { epsilon: typical.epsilon, checked, worst_margin: worst, violations }
}

/// Soft comparison of the variance with the classical key-bound estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyBoundCheck {
    /// Largest `V(A,E)` over the top decile of the cutoffs.
    pub top_variance: f64,
    pub classical: f64,
    pub classical_stderr: f64,
    pub allowance: f64,
    pub pass: bool,
}

/// `max_{top decile} V ≤ classical + 3σ + allowance`; the inequality is
/// asymptotic in the energy, so a failure is a warning, not an error.
pub fn key_bound_check(curve: &VarianceCurve, classical: f64, stderr: f64, allowance: f64) -> KeyBoundCheck {
    let n = curve.variance.len();
    let top = n - n.div_ceil(10).min(n);
    let top_variance = curve.variance[top..].iter().copied().fold(0.0, f64::max);
    KeyBoundCheck {
        top_variance,
        classical,
        classical_stderr: stderr,
        allowance,
        pass: top_variance <= classical + 3.0 * stderr + allowance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(values: Vec<f64>, target: f64) -> MeasureSeries {
        let energies = (1..=values.len()).map(|i| i as f64).collect();
        MeasureSeries::from_values("synthetic", target, energies, values)
    }

    #[test]
    fn constant_series_is_fully_typical() {
        let s = synthetic(vec![0.3; 50], 0.3);
        let t = extract_typical(&s, 0.01).unwrap();
        assert_eq!(t.indices.len(), 50);
        assert!(t.density.iter().all(|&d| d == 1.0));
        let v = quantum_variance(&s, &[10.0, 50.0]).unwrap();
        assert_eq!(v.variance, vec![0.0, 0.0]);
    }

    #[test]
    fn perfect_squares_are_excluded() {
        let values = (1..=400).map(|n: usize| {
            let r = (n as f64).sqrt() as usize;
            if r * r == n { 1.25 } else { 0.25 }
        });
        let s = synthetic(values.collect(), 0.25);
        let t = extract_typical(&s, 0.5).unwrap();
        for n in 1..=400usize {
            let r = (n as f64).sqrt().floor();
            let expect = 1.0 - r / n as f64;
            assert!((t.density[n - 1] - expect).abs() < 1e-14);
        }
        let c = chebyshev_check(&s, &t);
        assert!(c.holds());
        assert_eq!(c.checked, 400);
    }

    #[test]
    fn variance_matches_direct_sum() {
        let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = synthetic(values.clone(), 0.1);
        let v = quantum_variance(&s, &[7.0, 19.5]).unwrap();
        assert_eq!(v.counts, vec![7, 19]);
        let direct: f64 = values[..19].iter().map(|x| (x - 0.1).powi(2)).sum::<f64>() / 19.0;
        assert!((v.variance[1] - direct).abs() < 1e-15);
        let shifted = MeasureSeries::from_values("s", 1.1, s.energies.clone(), values.iter().map(|x| x + 1.0).collect());
        let vs = quantum_variance(&shifted, &[7.0, 19.5]).unwrap();
        for (a, b) in v.variance.iter().zip(&vs.variance) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn window_errors() {
        let s = synthetic(vec![0.0; 5], 0.0);
        assert_eq!(quantum_variance(&s, &[0.5]), Err(ErgodicityError::EmptyWindow(0.5)));
        assert!(matches!(quantum_variance(&s, &[9.0]), Err(ErgodicityError::AboveSpectrum { .. })));
        assert_eq!(local_weyl_average(&s, &[3.0, 2.0]), Err(ErgodicityError::InvalidCutoffs));
        assert_eq!(extract_typical(&s, 0.0), Err(ErgodicityError::InvalidEpsilon(0.0)));
    }

    #[test]
    fn clusters_and_deciles() {
        let e = [1.0, 2.0, 2.0 + 1e-12, 3.0];
        assert_eq!(degenerate_clusters(&e, 1e-8), vec![0..1, 1..3, 3..4]);
        let energies: Vec<f64> = (1..=25).map(f64::from).collect();
        let c = decile_cutoffs(&energies, 10);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], 3.0);
        assert_eq!(*c.last().unwrap(), 25.0);
    }

    #[test]
    fn sub_mass_partitions_parent() {
        let mut total = ZERO3;
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        for (b, _) in children(&IDENTITY_BARY, &pts) {
            add3(&mut total, &sub_mass(&b, 0.125));
        }
        let m = local_mass(0.5);
        for i in 0..3 {
            for j in 0..3 {
                assert!((total[i][j] - m[i][j]).abs() < 1e-16);
            }
        }
    }
}
