//! Conforming triangulations of simple polygons.
//!
//! [`triangulate`] clips ears, bisects longest edges until every edge is at
//! most the target size (keeping the mesh conforming) and finishes with a
//! Delaunay flip pass. [`refine`] splits every triangle into four at the edge
//! midpoints, so successive levels are nested.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{orient, triangle_area, Vec2};
use crate::polygon::{triangle_angles, RationalPolygon};

/// Smallest interior angle the generator guarantees, in degrees (capped by
/// the smallest polygon angle).
pub const MIN_ANGLE_DEG: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("polygon has no valid ear; degenerate input")]
    DegenerateInput,
    #[error("invalid target size {0}")]
    InvalidSize(f64),
    #[error("minimum angle {got:.2}° is below the bound {bound:.2}°")]
    PoorQuality { got: f64, bound: f64 },
    #[error("malformed mesh: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshFile", into = "MeshFile")]
pub struct TriangleMesh {
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: f64,
    level: u32,
}

/// On-disk mesh layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_nodes: Vec<usize>,
    pub h: f64,
    pub level: u32,
}

impl From<TriangleMesh> for MeshFile {
    fn from(m: TriangleMesh) -> Self {
        MeshFile {
            nodes: m.nodes.iter().map(|&p| p.into()).collect(),
            boundary_nodes: m.boundary_nodes(),
            triangles: m.triangles,
            h: m.h,
            level: m.level,
        }
    }
}

impl TryFrom<MeshFile> for TriangleMesh {
    type Error = MeshError;

    fn try_from(f: MeshFile) -> Result<Self, MeshError> {
        let n = f.nodes.len();
        let mut boundary = vec![false; n];
        for &b in &f.boundary_nodes {
            *boundary
                .get_mut(b)
                .ok_or_else(|| MeshError::Malformed(format!("boundary node {b} out of range")))? = true;
        }
        if f.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(MeshError::Malformed("triangle index out of range".into()));
        }
        Ok(TriangleMesh {
            nodes: f.nodes.into_iter().map(Vec2::from).collect(),
            triangles: f.triangles,
            boundary,
            h: f.h,
            level: f.level,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshQuality {
    /// Degrees.
    pub min_angle: f64,
    /// Degrees.
    pub max_angle: f64,
    pub h: f64,
    pub n_nodes: usize,
    pub n_tri: usize,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    /// Longest edge.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn corners(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                triangle_area(a, b, c)
            })
            .sum()
    }

    /// Undirected edges with the triangles using them.
    pub fn edges(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for j in 0..3 {
                map.entry(key(t[j], t[(j + 1) % 3])).or_default().push(ti);
            }
        }
        let mut v: Vec<_> = map.into_iter().collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub fn quality(&self) -> MeshQuality {
        let mut min_a = f64::INFINITY;
        let mut max_a: f64 = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            for ang in triangle_angles(a, b, c) {
                min_a = min_a.min(ang);
                max_a = max_a.max(ang);
            }
        }
        MeshQuality {
            min_angle: min_a.to_degrees(),
            max_angle: max_a.to_degrees(),
            h: self.h,
            n_nodes: self.nodes.len(),
            n_tri: self.triangles.len(),
        }
    }

    /// Checks every structural invariant against the polygon it meshes.
    pub fn check(&self, poly: &RationalPolygon) -> Result<(), String> {
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            if orient(a, b, c) <= 0.0 {
                return Err(format!("triangle {t} is not ccw"));
            }
        }
        let edges = self.edges();
        let mut on_boundary = vec![false; self.nodes.len()];
        for ((a, b), tris) in &edges {
            match tris.len() {
                1 => {
                    let (p, q) = (self.nodes[*a], self.nodes[*b]);
                    let d = poly.boundary_distance(p).max(poly.boundary_distance(q));
                    let dm = poly.boundary_distance(p.midpoint(q));
                    if d > 1e-12 || dm > 1e-12 {
                        return Err(format!("boundary edge ({a},{b}) is off the polygon boundary"));
                    }
                    on_boundary[*a] = true;
                    on_boundary[*b] = true;
                }
                2 => {}
                n => return Err(format!("edge ({a},{b}) shared by {n} triangles")),
            }
        }
        for (i, p) in self.nodes.iter().enumerate() {
            let geometric = poly.boundary_distance(*p) <= 1e-12;
            if geometric != self.boundary[i] || on_boundary[i] != self.boundary[i] {
                return Err(format!("boundary flag of node {i} is wrong"));
            }
        }
        let rel = (self.area() - poly.area()).abs() / poly.area();
        if rel > 1e-9 {
            return Err(format!("mesh area off by {rel:e} (relative)"));
        }
        let euler = self.nodes.len() as i64 - edges.len() as i64 + self.triangles.len() as i64;
        if euler != 1 {
            return Err(format!("V − E + F = {euler}"));
        }
        Ok(())
    }

    fn recompute_h(&mut self) {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for j in 0..3 {
                h = h.max(self.nodes[t[j]].dist(self.nodes[t[(j + 1) % 3]]));
            }
        }
        self.h = h;
    }
}

/// Index of the longest edge `(t[j], t[j+1])`; ties go to the lowest `j`.
fn longest_edge(nodes: &[Vec2], t: &[usize; 3]) -> (usize, f64) {
    let len = |j: usize| nodes[t[j]].dist(nodes[t[(j + 1) % 3]]);
    let l = [len(0), len(1), len(2)];
    let max = l[0].max(l[1]).max(l[2]);
    let j = (0..3).find(|&j| l[j] >= max * (1.0 - 1e-12)).unwrap_or(0);
    (j, max)
}

/// Mesh of `poly` with every edge at most `h_target`.
pub fn triangulate(poly: &RationalPolygon, h_target: f64) -> Result<TriangleMesh, MeshError> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(MeshError::InvalidSize(h_target));
    }
    let mut nodes: Vec<Vec2> = poly.vertices().to_vec();
    let mut boundary = vec![true; nodes.len()];
    let mut tris = poly.ear_triangles().ok_or(MeshError::DegenerateInput)?;
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut boundary_edges: std::collections::HashSet<(usize, usize)> =
        (0..poly.len()).map(|i| key(i, (i + 1) % poly.len())).collect();

    loop {
        let mut changed = false;
        let mut next = Vec::with_capacity(tris.len() * 2);
        for t in &tris {
            let (j, lmax) = longest_edge(&nodes, t);
            let hanging = (0..3).any(|e| mids.contains_key(&key(t[e], t[(e + 1) % 3])));
            if lmax <= h_target * (1.0 + 1e-12) && !hanging {
                next.push(*t);
                continue;
            }
            changed = true;
            // rotate so the longest edge is (a, b)
            let (a, b, c) = (t[j], t[(j + 1) % 3], t[(j + 2) % 3]);
            let k = key(a, b);
            let m = match mids.get(&k) {
                Some(&m) => m,
                None => {
                    let m = nodes.len();
                    nodes.push(nodes[a].midpoint(nodes[b]));
                    let on_b = boundary_edges.remove(&k);
                    if on_b {
                        boundary_edges.insert(key(a, m));
                        boundary_edges.insert(key(m, b));
                    }
                    boundary.push(on_b);
                    mids.insert(k, m);
                    m
                }
            };
            next.push([a, m, c]);
            next.push([m, b, c]);
        }
        tris = next;
        if !changed {
            break;
        }
    }

    let mut mesh = TriangleMesh {
        nodes,
        triangles: tris,
        boundary,
        h: 0.0,
        level: 0,
    };
    delaunay_flips(&mut mesh);
    mesh.recompute_h();
    let bound = MIN_ANGLE_DEG.min(poly.min_angle().to_degrees() - 1e-9);
    let q = mesh.quality();
    if q.min_angle < bound {
        return Err(MeshError::PoorQuality {
            got: q.min_angle,
            bound,
        });
    }
    Ok(mesh)
}

/// Flips interior edges whose opposite angles sum to more than π.
fn delaunay_flips(mesh: &mut TriangleMesh) {
    for _ in 0..1000 {
        let mut flipped = false;
        let mut owner: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for j in 0..3 {
                owner.entry(key(t[j], t[(j + 1) % 3])).or_default().push((ti, j));
            }
        }
        let mut keys: Vec<_> = owner.keys().copied().collect();
        keys.sort_unstable();
        let mut touched = vec![false; mesh.triangles.len()];
        for k in keys {
            let v = &owner[&k];
            if v.len() != 2 {
                continue;
            }
            let (t1, j1) = v[0];
            let (t2, j2) = v[1];
            if touched[t1] || touched[t2] {
                continue;
            }
            let tr1 = mesh.triangles[t1];
            let tr2 = mesh.triangles[t2];
            // edge (a, b) in t1, opposite vertex c; t2 has (b, a) and d
            let (a, b, c) = (tr1[j1], tr1[(j1 + 1) % 3], tr1[(j1 + 2) % 3]);
            let d = tr2[(j2 + 2) % 3];
            let (pa, pb, pc, pd) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c], mesh.nodes[d]);
            let ang = |p: Vec2, q: Vec2, r: Vec2| {
                let u = q - p;
                let w = r - p;
                u.cross(w).abs().atan2(u.dot(w))
            };
            let sum = ang(pc, pa, pb) + ang(pd, pa, pb);
            if sum <= std::f64::consts::PI + 1e-10 {
                continue;
            }
            if orient(pa, pd, pc) <= 0.0 || orient(pd, pb, pc) <= 0.0 {
                continue;
            }
            mesh.triangles[t1] = [a, d, c];
            mesh.triangles[t2] = [d, b, c];
            touched[t1] = true;
            touched[t2] = true;
            flipped = true;
        }
        if !flipped {
            break;
        }
    }
}

/// Splits every triangle into four at its edge midpoints.
pub fn refine(mesh: &TriangleMesh) -> TriangleMesh {
    let mut nodes = mesh.nodes.clone();
    let mut boundary = mesh.boundary.clone();
    let edge_count: HashMap<(usize, usize), usize> = mesh
        .edges()
        .into_iter()
        .map(|(k, t)| (k, t.len()))
        .collect();
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<Vec2>, boundary: &mut Vec<bool>| {
        *mids.entry(key(a, b)).or_insert_with(|| {
            nodes.push(nodes[a].midpoint(nodes[b]));
            boundary.push(edge_count[&key(a, b)] == 1);
            nodes.len() - 1
        })
    };
    let mut tris = Vec::with_capacity(mesh.triangles.len() * 4);
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut nodes, &mut boundary);
        let bc = mid(b, c, &mut nodes, &mut boundary);
        let ca = mid(c, a, &mut nodes, &mut boundary);
        tris.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    let mut out = TriangleMesh {
        nodes,
        triangles: tris,
        boundary,
        h: 0.0,
        level: mesh.level + 1,
    };
    out.recompute_h();
    out
}

/// Mesh at `h_target` followed by `levels` uniform refinements.
pub fn build(poly: &RationalPolygon, h_target: f64, levels: u32) -> Result<TriangleMesh, MeshError> {
    let mut m = triangulate(poly, h_target)?;
    for _ in 0..levels {
        m = refine(&m);
    }
    Ok(m)
}

/// True if some node lies strictly inside a triangle it is not a corner of.
pub fn has_interior_node_overlap(mesh: &TriangleMesh) -> bool {
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = mesh.corners(ti);
        let scale = mesh.h.max(1e-300);
        for (i, &p) in mesh.nodes.iter().enumerate() {
            if t.contains(&i) {
                continue;
            }
            let tol = 1e-12 * scale * scale;
            if orient(a, b, p) > tol && orient(b, c, p) > tol && orient(c, a, p) > tol {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::{equilateral, l_shape, pi8_triangle, right_isosceles, unit_square};

    #[test]
    fn coarse_triangle_is_single_element() {
        let t = right_isosceles(1.0);
        let m = triangulate(&t, 10.0).unwrap();
        assert_eq!(m.triangles().len(), 1);
        assert_eq!(m.boundary_nodes().len(), 3);
        m.check(&t).unwrap();
    }

    #[test]
    fn square_mesh_invariants() {
        let sq = unit_square();
        let m = triangulate(&sq, 0.5).unwrap();
        m.check(&sq).unwrap();
        assert!((m.area() - 1.0).abs() < 1e-12);
        assert!(m.h() <= 0.5 + 1e-12);
        let q = m.quality();
        assert!((q.min_angle - 45.0).abs() < 1e-9);
        assert!((q.max_angle - 90.0).abs() < 1e-9);
    }

    #[test]
    fn l_shape_keeps_reentrant_corner() {
        let l = l_shape();
        let m = triangulate(&l, 0.2).unwrap();
        m.check(&l).unwrap();
        assert!(m.nodes().iter().any(|p| p.dist(Vec2::new(1.0, 1.0)) == 0.0));
        assert!((m.area() - 3.0).abs() < 1e-9);
        let q = triangulate(&l, 0.1).unwrap().quality();
        assert!(q.min_angle >= MIN_ANGLE_DEG, "{q:?}");
    }

    #[test]
    fn refinement_is_nested_and_area_exact() {
        let single = triangulate(&right_isosceles(1.0), 10.0).unwrap();
        let r = refine(&single);
        assert_eq!(r.triangles().len(), 4);
        assert_eq!(r.nodes().len(), 6);

        let sq = unit_square();
        let m = triangulate(&sq, 0.5).unwrap();
        let r2 = refine(&refine(&m));
        assert_eq!(r2.triangles().len(), 16 * m.triangles().len());
        assert!((r2.h() - 0.125).abs() < 1e-15);
        assert!((r2.area() - m.area()).abs() < 1e-12);
        assert_eq!(&r2.nodes()[..m.nodes().len()], m.nodes());
        r2.check(&sq).unwrap();
    }

    #[test]
    fn equilateral_element_angles() {
        let e = triangulate(&equilateral(), 2.0).unwrap();
        let q = e.quality();
        assert!((q.min_angle - 60.0).abs() < 1e-9 && (q.max_angle - 60.0).abs() < 1e-9);
    }

    #[test]
    fn builtins_mesh_cleanly() {
        for p in [unit_square(), right_isosceles(1.0), pi8_triangle(), equilateral(), l_shape()] {
            for h in [0.3, 0.07] {
                let m = triangulate(&p, h).unwrap();
                m.check(&p).unwrap();
                assert!(m.h() <= h * (1.0 + 1e-12));
                assert!(!has_interior_node_overlap(&m));
            }
        }
    }

    #[test]
    fn rejects_bad_size() {
        assert_eq!(
            triangulate(&unit_square(), 0.0),
            Err(MeshError::InvalidSize(0.0))
        );
    }
}
