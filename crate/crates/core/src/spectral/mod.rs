//! Linear finite elements for the Dirichlet Laplacian and its lowest modes.
//!
//! `assemble` builds the stiffness and consistent mass matrices on interior
//! nodes (boundary nodes are eliminated, so discrete modes vanish on the
//! boundary exactly). `solve_lowest` runs the shift-invert block Lanczos in
//! [`lanczos`] and certifies every returned pair.

pub mod band;
pub mod cholesky;
pub mod lanczos;
pub mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::mesh::{self, MeshError, TriangleMesh};
use crate::polygon::RationalPolygon;
pub use lanczos::EigenOptions;
pub use sparse::CsrMatrix;

use std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("triangle {0} has non-positive area")]
    SingularElement(usize),
    #[error("k = {k} modes requested but at most {max} are reliable for dimension {dim}")]
    TooManyModes { k: usize, max: usize, dim: usize },
    #[error("at least one mode must be requested")]
    NoModes,
    #[error("eigensolver did not converge (basis {basis_size}, worst residual {worst:.3e})")]
    NoConvergence { residuals: Vec<f64>, worst: f64, basis_size: usize },
    #[error("stiffness matrix is not positive definite at node {0}")]
    NotPositiveDefinite(usize),
    #[error("spectrum is empty")]
    Empty,
    #[error("energy {e} lies above the computed spectrum (max {max})")]
    AboveSpectrum { e: f64, max: f64 },
    #[error("convergence study needs at least two levels")]
    TooFewLevels,
    #[error("invalid spectrum: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Element stiffness and consistent mass of a linear triangle, or `None` for
/// a degenerate (or clockwise) triangle.
pub fn element_matrices(p: [crate::Vec2; 3]) -> Option<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let area = 0.5 * ((p[1] - p[0]).cross(p[2] - p[0]));
    if !(area > 0.0) {
        return None;
    }
    let b = [p[1].y - p[2].y, p[2].y - p[0].y, p[0].y - p[1].y];
    let c = [p[2].x - p[1].x, p[0].x - p[2].x, p[1].x - p[0].x];
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            m[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    Some((k, m))
}

fn element_set(mesh: &TriangleMesh, exec: Exec) -> Result<Vec<([[f64; 3]; 3], [[f64; 3]; 3])>, SpectralError> {
    let elems = exec.map(mesh.triangles().len(), |t| element_matrices(mesh.corners(t)));
    elems
        .into_iter()
        .enumerate()
        .map(|(t, e)| e.ok_or(SpectralError::SingularElement(t)))
        .collect()
}

/// Stiffness and mass over all nodes, before boundary elimination.
pub fn assemble_full(mesh: &TriangleMesh) -> Result<(CsrMatrix, CsrMatrix), SpectralError> {
    let elems = element_set(mesh, Exec::default())?;
    let mut kt = Vec::with_capacity(9 * elems.len());
    let mut mt = Vec::with_capacity(9 * elems.len());
    for (tri, (ke, me)) in mesh.triangles().iter().zip(&elems) {
        for i in 0..3 {
            for j in 0..3 {
                kt.push((tri[i], tri[j], ke[i][j]));
                mt.push((tri[i], tri[j], me[i][j]));
            }
        }
    }
    let n = mesh.nodes().len();
    Ok((CsrMatrix::from_triplets(n, &kt), CsrMatrix::from_triplets(n, &mt)))
}

/// Discrete Dirichlet problem `K ψ = E M ψ` on the interior nodes of a mesh.
#[derive(Debug, Clone)]
pub struct StiffnessMassSystem {
    stiffness: CsrMatrix,
    mass: CsrMatrix,
    dof_node: Vec<usize>,
    node_dof: Vec<Option<usize>>,
    mesh: TriangleMesh,
}

pub fn assemble(mesh: &TriangleMesh) -> Result<StiffnessMassSystem, SpectralError> {
    let elems = element_set(mesh, Exec::default())?;
    let n = mesh.nodes().len();
    let mut node_dof = vec![None; n];
    let mut dof_node = Vec::new();
    for (v, d) in node_dof.iter_mut().enumerate() {
        if !mesh.is_boundary(v) {
            *d = Some(dof_node.len());
            dof_node.push(v);
        }
    }
    let mut kt = Vec::with_capacity(9 * elems.len());
    let mut mt = Vec::with_capacity(9 * elems.len());
    for (tri, (ke, me)) in mesh.triangles().iter().zip(&elems) {
        for i in 0..3 {
            let Some(r) = node_dof[tri[i]] else { continue };
            for j in 0..3 {
                let Some(c) = node_dof[tri[j]] else { continue };
                kt.push((r, c, ke[i][j]));
                mt.push((r, c, me[i][j]));
            }
        }
    }
    let d = dof_node.len();
    Ok(StiffnessMassSystem {
        stiffness: CsrMatrix::from_triplets(d, &kt),
        mass: CsrMatrix::from_triplets(d, &mt),
        dof_node,
        node_dof,
        mesh: mesh.clone(),
    })
}

impl StiffnessMassSystem {
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn dim(&self) -> usize {
        self.dof_node.len()
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Mesh node of each matrix index.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.dof_node
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }

    /// Nodal vector (zero on the boundary) from interior coefficients.
    pub fn to_nodal(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.node_dof.len()];
        for (d, &node) in self.dof_node.iter().enumerate() {
            v[node] = x[d];
        }
        v
    }

    pub fn to_dof(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_node.iter().map(|&n| nodal[n]).collect()
    }

    /// Largest number of modes `solve_lowest` accepts.
    pub fn max_modes(&self) -> usize {
        self.dim() / 3
    }
}

/// Lowest Dirichlet eigenpairs on a mesh with their certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    /// Nodal coefficients over all mesh nodes, `M`-normalised.
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    orthonormality_error: f64,
    mesh: TriangleMesh,
}

impl Spectrum {
    /// Certifies externally supplied pairs (e.g. a rotated degenerate basis):
    /// recomputes residuals and the orthonormality defect.
    pub fn from_parts(mesh: TriangleMesh, eigenvalues: Vec<f64>, vectors: Vec<Vec<f64>>) -> Result<Self, SpectralError> {
        let sys = assemble(&mesh)?;
        Self::certify(&sys, eigenvalues, vectors, Exec::default())
    }

    fn certify(sys: &StiffnessMassSystem, eigenvalues: Vec<f64>, vectors: Vec<Vec<f64>>, exec: Exec) -> Result<Self, SpectralError> {
        if eigenvalues.len() != vectors.len() {
            return Err(SpectralError::Invalid("eigenvalue/vector count mismatch".into()));
        }
        let n = sys.mesh.nodes().len();
        for v in &vectors {
            if v.len() != n {
                return Err(SpectralError::Invalid("vector length differs from node count".into()));
            }
            if sys.mesh.boundary_nodes().iter().any(|&b| v[b] != 0.0) {
                return Err(SpectralError::Invalid("vector is nonzero on the boundary".into()));
            }
        }
        let dofs: Vec<Vec<f64>> = vectors.iter().map(|v| sys.to_dof(v)).collect();
        let mass_dofs = exec.map(dofs.len(), |i| sys.mass.mul(&dofs[i]));
        let residuals = exec.map(dofs.len(), |i| {
            let kv = sys.stiffness.mul(&dofs[i]);
            let e = eigenvalues[i];
            let r: f64 = kv.iter().zip(&mass_dofs[i]).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt();
            let m: f64 = mass_dofs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            r / (e * m)
        });
        let rows = exec.map(dofs.len(), |i| {
            (0..=i)
                .map(|j| {
                    let g: f64 = dofs[j].iter().zip(&mass_dofs[i]).map(|(a, b)| a * b).sum();
                    (g - if i == j { 1.0 } else { 0.0 }).abs()
                })
                .fold(0.0, f64::max)
        });
        let orthonormality_error = rows.into_iter().fold(0.0, f64::max);
        Ok(Spectrum { eigenvalues, vectors, residuals, orthonormality_error, mesh: sys.mesh.clone() })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `max |ψᵢᵀ M ψⱼ − δᵢⱼ|`.
    pub fn orthonormality_error(&self) -> f64 {
        self.orthonormality_error
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn max_energy(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `#{n : E_n ≤ e}`.
    pub fn count_below(&self, e: f64) -> usize {
        self.eigenvalues.partition_point(|&x| x <= e)
    }

    /// The first `k` pairs.
    pub fn truncated(&self, k: usize) -> Spectrum {
        let k = k.min(self.len());
        Spectrum {
            eigenvalues: self.eigenvalues[..k].to_vec(),
            vectors: self.vectors[..k].to_vec(),
            residuals: self.residuals[..k].to_vec(),
            orthonormality_error: self.orthonormality_error,
            mesh: self.mesh.clone(),
        }
    }
}

/// Lowest `k` eigenpairs, ascending (ties keep solver order).
pub fn solve_lowest(system: &StiffnessMassSystem, k: usize, opts: &EigenOptions) -> Result<Spectrum, SpectralError> {
    if k == 0 {
        return Err(SpectralError::NoModes);
    }
    let max = system.max_modes();
    if k > max {
        return Err(SpectralError::TooManyModes { k, max, dim: system.dim() });
    }
    let res = lanczos::lowest(&system.stiffness, &system.mass, k, opts).map_err(|e| match e {
        lanczos::LanczosError::NotPositiveDefinite(p) => SpectralError::NotPositiveDefinite(system.dof_node[p.row]),
        lanczos::LanczosError::NoConvergence { residuals, basis_size } => {
            let worst = residuals.iter().copied().fold(0.0, f64::max);
            SpectralError::NoConvergence { residuals, worst, basis_size }
        }
    })?;
    let vectors = res.vectors.iter().map(|v| system.to_nodal(v)).collect();
    Spectrum::certify(system, res.values, vectors, opts.exec)
}

/// Two-term Weyl law `N(E) ≈ A E/4π − P √E/4π`.
pub fn weyl_prediction(poly: &RationalPolygon, e: f64) -> f64 {
    poly.area() * e / (4.0 * PI) - poly.perimeter() * e.sqrt() / (4.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylCheck {
    pub e_max: f64,
    pub counted: usize,
    pub predicted: f64,
    pub rel_gap: f64,
}

/// Compares the mode count below 80% of the largest computed eigenvalue
/// with the two-term Weyl law.
pub fn weyl_check(spectrum: &Spectrum, poly: &RationalPolygon) -> Result<WeylCheck, SpectralError> {
    if spectrum.is_empty() {
        return Err(SpectralError::Empty);
    }
    weyl_check_at(spectrum, poly, 0.8 * spectrum.max_energy())
}

/// As [`weyl_check`] at an explicit energy inside the computed range.
pub fn weyl_check_at(spectrum: &Spectrum, poly: &RationalPolygon, e: f64) -> Result<WeylCheck, SpectralError> {
    if spectrum.is_empty() {
        return Err(SpectralError::Empty);
    }
    if e > spectrum.max_energy() {
        return Err(SpectralError::AboveSpectrum { e, max: spectrum.max_energy() });
    }
    let counted = spectrum.count_below(e);
    let predicted = weyl_prediction(poly, e);
    Ok(WeylCheck { e_max: e, counted, predicted, rel_gap: (counted as f64 - predicted) / predicted })
}

/// `(4 E(h/2) − E(h)) / 3`: removes the `h²` term of linear elements.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: u32,
    pub h: f64,
    pub nodes: usize,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceStudy {
    /// `(E_n(h) − E_n(h/2)) / (E_n(h/2) − E_n(h/4))` for each consecutive
    /// triple of levels; ≈ 4 for second-order convergence.
    pub fn ratios(&self, mode: usize) -> Vec<f64> {
        self.rows
            .windows(3)
            .map(|w| (w[0].eigenvalues[mode] - w[1].eigenvalues[mode]) / (w[1].eigenvalues[mode] - w[2].eigenvalues[mode]))
            .collect()
    }

    /// Empirical orders `log₂` of the ratios.
    pub fn orders(&self, mode: usize) -> Vec<f64> {
        self.ratios(mode).into_iter().map(f64::log2).collect()
    }

    /// Richardson values from each consecutive pair of levels.
    pub fn extrapolated(&self, mode: usize) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| richardson(w[0].eigenvalues[mode], w[1].eigenvalues[mode]))
            .collect()
    }

    pub fn is_monotone(&self, mode: usize) -> bool {
        self.rows.windows(2).all(|w| w[1].eigenvalues[mode] <= w[0].eigenvalues[mode])
    }
}

/// Lowest `k` eigenvalues on `levels` nested meshes starting at target size
/// `h`.
pub fn convergence_study(
    poly: &RationalPolygon,
    h: f64,
    k: usize,
    levels: u32,
    opts: &EigenOptions,
) -> Result<ConvergenceStudy, SpectralError> {
    if k == 0 {
        return Err(SpectralError::NoModes);
    }
    if levels < 2 {
        return Err(SpectralError::TooFewLevels);
    }
    let mut m = mesh::triangulate(poly, h)?;
    let mut rows = Vec::new();
    for level in 0..levels {
        if level > 0 {
            m = mesh::refine(&m);
        }
        let sys = assemble(&m)?;
        let s = solve_lowest(&sys, k, opts)?;
        rows.push(ConvergenceRow { level, h: m.h(), nodes: m.nodes().len(), eigenvalues: s.eigenvalues });
    }
    Ok(ConvergenceStudy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::builtin;
    use crate::Vec2;

    #[test]
    fn reference_element() {
        let (k, m) = element_matrices([Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        assert!((m.iter().flatten().sum::<f64>() - 0.5).abs() < 1e-15);
        assert!(element_matrices([Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)]).is_none());
    }

    #[test]
    fn assembly_invariants() {
        let poly = builtin("square").unwrap();
        let mesh = mesh::triangulate(&poly, 0.5).unwrap();
        let (k, m) = assemble_full(&mesh).unwrap();
        for v in 0..mesh.nodes().len() {
            if !mesh.is_boundary(v) {
                assert!(k.row_sum(v).abs() < 1e-12);
            }
        }
        assert!((m.total() - 1.0).abs() < 1e-10);
        let sys = assemble(&mesh).unwrap();
        assert!(sys.stiffness().asymmetry() < 1e-12);
        assert!(sys.mass().asymmetry() < 1e-12);
        assert_eq!(sys.dim(), mesh.nodes().len() - mesh.boundary_nodes().len());
        assert!((0..sys.dim()).all(|i| sys.mass().row_sum(i) > 0.0));
    }

    #[test]
    fn square_modes_and_certificates() {
        let poly = builtin("square").unwrap();
        let mesh = mesh::triangulate(&poly, 1.0 / 16.0).unwrap();
        let sys = assemble(&mesh).unwrap();
        let s = solve_lowest(&sys, 6, &EigenOptions::default()).unwrap();
        let e1 = 2.0 * PI * PI;
        assert!(s.eigenvalues()[0] > e1 && s.eigenvalues()[0] < 1.02 * e1);
        assert!(s.max_residual() <= 1e-8);
        assert!(s.orthonormality_error() <= 1e-8);
        // (1,2)/(2,1) pair
        let (a, b) = (s.eigenvalues()[1], s.eigenvalues()[2]);
        assert!((a - b).abs() / a <= 1e-3);
        for v in s.vectors() {
            assert!(mesh.boundary_nodes().iter().all(|&i| v[i] == 0.0));
        }
    }

    #[test]
    fn rejects_bad_mode_counts() {
        let poly = builtin("square").unwrap();
        let mesh = mesh::triangulate(&poly, 0.25).unwrap();
        let sys = assemble(&mesh).unwrap();
        assert_eq!(solve_lowest(&sys, 0, &EigenOptions::default()), Err(SpectralError::NoModes));
        assert!(matches!(
            solve_lowest(&sys, sys.max_modes() + 1, &EigenOptions::default()),
            Err(SpectralError::TooManyModes { .. })
        ));
        assert_eq!(
            convergence_study(&poly, 0.5, 1, 1, &EigenOptions::default()),
            Err(SpectralError::TooFewLevels)
        );
    }

    #[test]
    fn weyl_formula() {
        let poly = builtin("square").unwrap();
        assert!((weyl_prediction(&poly, 1000.0) - 69.5).abs() < 0.05);
    }
}
