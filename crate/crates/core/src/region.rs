//! Measurable test sets `A ⊂ D` with piecewise smooth boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{orient, point_segment_distance, segments_intersect, Vec2};
use crate::polygon::RationalPolygon;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("region is not contained in the polygon: {0}")]
    OutsideDomain(String),
    #[error("region has zero area")]
    Empty,
    #[error("invalid region: {0}")]
    Invalid(String),
}

/// `{x : normal · x ≤ offset}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: Vec2,
    pub offset: f64,
}

impl HalfPlane {
    fn excess(&self, p: Vec2) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Shape of a region, before it is checked against a polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RegionShape {
    /// Simple polygon given by its vertices.
    Polygon { vertices: Vec<Vec2> },
    Disk { center: Vec2, radius: f64 },
    /// Intersection of half-planes with the domain.
    HalfPlanes { planes: Vec<HalfPlane> },
    /// The part of the domain not covered by the inner shape.
    Complement { inner: Box<RegionShape> },
    /// Left half of the domain's bounding box, `x ≤ (xmin + xmax)/2`.
    LeftHalf,
}

impl RegionShape {
    /// Parses `left-half`, `disk:CX:CY:R`, `halfplane:NX:NY:C` or
    /// `polygon:X,Y;X,Y;...`.
    pub fn parse(s: &str) -> Result<Self, RegionError> {
        let bad = || RegionError::Invalid(format!("cannot parse region {s:?}"));
        let nums = |t: &str| -> Result<Vec<f64>, RegionError> {
            t.split(':')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match head.trim().to_ascii_lowercase().as_str() {
            "left-half" | "left_half" => Ok(RegionShape::LeftHalf),
            "disk" => match nums(rest)?.as_slice() {
                &[cx, cy, r] => Ok(RegionShape::Disk {
                    center: Vec2::new(cx, cy),
                    radius: r,
                }),
                _ => Err(bad()),
            },
            "halfplane" => match nums(rest)?.as_slice() {
                &[nx, ny, c] => Ok(RegionShape::HalfPlanes {
                    planes: vec![HalfPlane {
                        normal: Vec2::new(nx, ny),
                        offset: c,
                    }],
                }),
                _ => Err(bad()),
            },
            "polygon" => {
                let vertices = rest
                    .split(';')
                    .map(|pt| {
                        let (x, y) = pt.split_once(',').ok_or_else(bad)?;
                        Ok(Vec2::new(
                            x.trim().parse().map_err(|_| bad())?,
                            y.trim().parse().map_err(|_| bad())?,
                        ))
                    })
                    .collect::<Result<Vec<_>, RegionError>>()?;
                Ok(RegionShape::Polygon { vertices })
            }
            "complement" => Ok(RegionShape::Complement {
                inner: Box::new(RegionShape::parse(rest)?),
            }),
            _ => Err(bad()),
        }
    }
}

/// Classification of a triangle against a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cover {
    Inside,
    Outside,
    Straddle,
}

#[derive(Debug, Clone, PartialEq)]
enum Resolved {
    Polygon(Vec<Vec2>),
    Disk(Vec2, f64),
    HalfPlanes(Vec<HalfPlane>),
    Complement(Box<Resolved>),
}

/// A region `A` validated against a polygon `D`.
///
/// Points within `1e-12` of `∂A` may be classified either way; the boundary
/// has measure zero so no integral depends on the choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    shape: RegionShape,
    resolved: Resolved,
    area: f64,
    domain_area: f64,
}

fn resolve(shape: &RegionShape, poly: &RationalPolygon) -> Result<Resolved, RegionError> {
    Ok(match shape {
        RegionShape::Polygon { vertices } => {
            if vertices.len() < 3 {
                return Err(RegionError::Invalid("polygon region needs 3 vertices".into()));
            }
            let mut v = vertices.clone();
            if signed_area(&v) < 0.0 {
                v.reverse();
            }
            Resolved::Polygon(v)
        }
        RegionShape::Disk { center, radius } => {
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(RegionError::Invalid(format!("radius {radius}")));
            }
            Resolved::Disk(*center, *radius)
        }
        RegionShape::HalfPlanes { planes } => {
            if planes.is_empty() {
                return Err(RegionError::Invalid("no half-planes".into()));
            }
            let mut out = Vec::with_capacity(planes.len());
            for h in planes {
                let n = h.normal.norm();
                if !(n > 0.0) {
                    return Err(RegionError::Invalid("zero half-plane normal".into()));
                }
                out.push(HalfPlane {
                    normal: h.normal * (1.0 / n),
                    offset: h.offset / n,
                });
            }
            Resolved::HalfPlanes(out)
        }
        RegionShape::Complement { inner } => Resolved::Complement(Box::new(resolve(inner, poly)?)),
        RegionShape::LeftHalf => {
            let (lo, hi) = poly.bbox();
            Resolved::HalfPlanes(vec![HalfPlane {
                normal: Vec2::new(1.0, 0.0),
                offset: 0.5 * (lo.x + hi.x),
            }])
        }
    })
}

fn signed_area(v: &[Vec2]) -> f64 {
    let k = v.len();
    0.5 * (0..k).map(|i| v[i].cross(v[(i + 1) % k])).sum::<f64>()
}

/// Sutherland–Hodgman clip of `subject` by one half-plane. The result may be
/// degenerate for non-convex subjects but its signed area is exact.
fn clip(subject: &[Vec2], h: &HalfPlane) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(subject.len() + 2);
    let k = subject.len();
    for i in 0..k {
        let a = subject[i];
        let b = subject[(i + 1) % k];
        let ea = h.excess(a);
        let eb = h.excess(b);
        if ea <= 0.0 {
            out.push(a);
        }
        if (ea < 0.0 && eb > 0.0) || (ea > 0.0 && eb < 0.0) {
            out.push(a.lerp(b, ea / (ea - eb)));
        }
    }
    out
}

impl Resolved {
    fn area(&self, poly: &RationalPolygon) -> f64 {
        match self {
            Resolved::Polygon(v) => signed_area(v),
            Resolved::Disk(_, r) => PI * r * r,
            Resolved::HalfPlanes(planes) => {
                let mut p = poly.vertices().to_vec();
                for h in planes {
                    p = clip(&p, h);
                    if p.len() < 3 {
                        return 0.0;
                    }
                }
                signed_area(&p)
            }
            Resolved::Complement(inner) => poly.area() - inner.area(poly),
        }
    }

    fn contains(&self, p: Vec2) -> bool {
        match self {
            Resolved::Polygon(v) => {
                let k = v.len();
                if (0..k).any(|i| point_segment_distance(p, v[i], v[(i + 1) % k]) <= 1e-12) {
                    return true;
                }
                let mut inside = false;
                for i in 0..k {
                    let (a, b) = (v[i], v[(i + 1) % k]);
                    if (a.y > p.y) != (b.y > p.y) {
                        let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                        if p.x < x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
            Resolved::Disk(c, r) => p.dist(*c) <= r + 1e-12,
            Resolved::HalfPlanes(planes) => planes.iter().all(|h| h.excess(p) <= 1e-12),
            Resolved::Complement(inner) => !inner.contains(p),
        }
    }

    fn classify(&self, t: [Vec2; 3]) -> Cover {
        match self {
            Resolved::Polygon(v) => {
                let k = v.len();
                for i in 0..k {
                    let (a, b) = (v[i], v[(i + 1) % k]);
                    for j in 0..3 {
                        if segments_intersect(a, b, t[j], t[(j + 1) % 3]) {
                            return Cover::Straddle;
                        }
                    }
                    if point_in_triangle(a, t) {
                        return Cover::Straddle;
                    }
                }
                let c = (t[0] + t[1] + t[2]) * (1.0 / 3.0);
                if self.contains(c) {
                    Cover::Inside
                } else {
                    Cover::Outside
                }
            }
            Resolved::Disk(c, r) => {
                if t.iter().all(|p| p.dist(*c) <= *r) {
                    Cover::Inside
                } else if point_in_triangle(*c, t)
                    || (0..3).any(|j| point_segment_distance(*c, t[j], t[(j + 1) % 3]) < *r)
                {
                    Cover::Straddle
                } else {
                    Cover::Outside
                }
            }
            Resolved::HalfPlanes(planes) => {
                if planes.iter().any(|h| t.iter().all(|&p| h.excess(p) >= 0.0)) {
                    Cover::Outside
                } else if planes.iter().all(|h| t.iter().all(|&p| h.excess(p) <= 0.0)) {
                    Cover::Inside
                } else {
                    Cover::Straddle
                }
            }
            Resolved::Complement(inner) => match inner.classify(t) {
                Cover::Inside => Cover::Outside,
                Cover::Outside => Cover::Inside,
                Cover::Straddle => Cover::Straddle,
            },
        }
    }

    /// Sorted parameters in `(0, 1)` where the segment crosses the boundary.
    fn crossings(&self, a: Vec2, b: Vec2, out: &mut Vec<f64>) {
        let d = b - a;
        match self {
            Resolved::Polygon(v) => {
                let k = v.len();
                for i in 0..k {
                    let (p, q) = (v[i], v[(i + 1) % k]);
                    let e = q - p;
                    let den = d.cross(e);
                    if den == 0.0 {
                        continue;
                    }
                    let t = (p - a).cross(e) / den;
                    let s = (p - a).cross(d) / den;
                    if (0.0..=1.0).contains(&s) && t > 0.0 && t < 1.0 {
                        out.push(t);
                    }
                }
            }
            Resolved::Disk(c, r) => {
                let f = a - *c;
                let qa = d.norm2();
                let qb = 2.0 * f.dot(d);
                let qc = f.norm2() - r * r;
                let disc = qb * qb - 4.0 * qa * qc;
                if qa > 0.0 && disc > 0.0 {
                    let sq = disc.sqrt();
                    for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                        if t > 0.0 && t < 1.0 {
                            out.push(t);
                        }
                    }
                }
            }
            Resolved::HalfPlanes(planes) => {
                for h in planes {
                    let ea = h.excess(a);
                    let eb = h.excess(b);
                    if (ea < 0.0) != (eb < 0.0) && ea != eb {
                        let t = ea / (ea - eb);
                        if t > 0.0 && t < 1.0 {
                            out.push(t);
                        }
                    }
                }
            }
            Resolved::Complement(inner) => inner.crossings(a, b, out),
        }
    }
}

fn point_in_triangle(p: Vec2, t: [Vec2; 3]) -> bool {
    let o1 = orient(t[0], t[1], p);
    let o2 = orient(t[1], t[2], p);
    let o3 = orient(t[2], t[0], p);
    (o1 > 0.0 && o2 > 0.0 && o3 > 0.0) || (o1 < 0.0 && o2 < 0.0 && o3 < 0.0)
}

impl Region {
    /// Validates the shape against `poly`: the region must have positive
    /// area, and sampled boundary points must lie in the closed polygon.
    pub fn new(shape: RegionShape, poly: &RationalPolygon) -> Result<Self, RegionError> {
        let resolved = resolve(&shape, poly)?;
        check_inside(&resolved, poly)?;
        let area = resolved.area(poly);
        if !(area > 1e-14 * poly.area()) {
            return Err(RegionError::Empty);
        }
        Ok(Self {
            shape,
            resolved,
            area,
            domain_area: poly.area(),
        })
    }

    pub fn shape(&self) -> &RegionShape {
        &self.shape
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// `area(A) / area(D)`.
    pub fn area_fraction(&self) -> f64 {
        self.area / self.domain_area
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.resolved.contains(p)
    }

    /// Classifies a triangle lying inside the domain. `Inside`/`Outside` are
    /// exact; `Straddle` is conservative.
    pub fn classify(&self, t: [Vec2; 3]) -> Cover {
        self.resolved.classify(t)
    }

    /// Length of the part of the segment `ab` (assumed inside the domain)
    /// that lies in the region.
    pub fn segment_length_inside(&self, a: Vec2, b: Vec2) -> f64 {
        let len = a.dist(b);
        if len == 0.0 {
            return 0.0;
        }
        let mut ts = vec![0.0];
        self.resolved.crossings(a, b, &mut ts);
        ts.push(1.0);
        ts.sort_by(|x, y| x.total_cmp(y));
        let mut inside = 0.0;
        for w in ts.windows(2) {
            if w[1] > w[0] && self.contains(a.lerp(b, 0.5 * (w[0] + w[1]))) {
                inside += w[1] - w[0];
            }
        }
        inside * len
    }

    /// `D ∖ A`.
    pub fn complement(&self, poly: &RationalPolygon) -> Result<Region, RegionError> {
        Region::new(
            RegionShape::Complement {
                inner: Box::new(self.shape.clone()),
            },
            poly,
        )
    }
}

fn check_inside(r: &Resolved, poly: &RationalPolygon) -> Result<(), RegionError> {
    match r {
        Resolved::Polygon(v) => {
            let k = v.len();
            for i in 0..k {
                let (a, b) = (v[i], v[(i + 1) % k]);
                if !poly.contains(a) || !poly.contains(a.midpoint(b)) {
                    return Err(RegionError::OutsideDomain(format!("vertex {i} or its edge")));
                }
            }
            Ok(())
        }
        Resolved::Disk(c, r) => {
            if !poly.contains(*c) {
                return Err(RegionError::OutsideDomain("disk center".into()));
            }
            for j in 0..64 {
                let p = *c + Vec2::from_angle(2.0 * PI * j as f64 / 64.0) * *r;
                if !poly.contains(p) {
                    return Err(RegionError::OutsideDomain(format!("disk boundary point {j}")));
                }
            }
            Ok(())
        }
        Resolved::HalfPlanes(_) => Ok(()),
        Resolved::Complement(inner) => check_inside(inner, poly),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::{l_shape, unit_square};

    #[test]
    fn left_half_and_disk_membership() {
        let sq = unit_square();
        let left = Region::new(RegionShape::LeftHalf, &sq).unwrap();
        assert!(left.contains(Vec2::new(0.25, 0.7)));
        assert!(!left.contains(Vec2::new(0.75, 0.7)));
        assert!((left.area() - 0.5).abs() < 1e-15);
        let disk = Region::new(
            RegionShape::Disk {
                center: Vec2::new(0.5, 0.5),
                radius: 0.2,
            },
            &sq,
        )
        .unwrap();
        assert!(disk.contains(Vec2::new(0.5, 0.69)));
        assert!(!disk.contains(Vec2::new(0.5, 0.71)));
    }

    #[test]
    fn rejects_regions_leaving_domain() {
        let l = l_shape();
        let r = Region::new(
            RegionShape::Disk {
                center: Vec2::new(1.5, 1.5),
                radius: 0.1,
            },
            &l,
        );
        assert!(matches!(r, Err(RegionError::OutsideDomain(_))));
        let r = Region::new(RegionShape::parse("halfplane:1:0:-1").unwrap(), &l);
        assert_eq!(r, Err(RegionError::Empty));
    }

    #[test]
    fn half_plane_area_on_l_shape() {
        let l = l_shape();
        let r = Region::new(RegionShape::parse("halfplane:0:1:0.5").unwrap(), &l).unwrap();
        assert!((r.area() - 1.0).abs() < 1e-14);
        let c = r.complement(&l).unwrap();
        assert!((c.area() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn segment_lengths() {
        let sq = unit_square();
        let left = Region::new(RegionShape::LeftHalf, &sq).unwrap();
        let a = Vec2::new(0.1, 0.1);
        let b = Vec2::new(0.9, 0.1);
        assert!((left.segment_length_inside(a, b) - 0.4).abs() < 1e-14);
        let tri = Region::new(
            RegionShape::parse("polygon:0.2,0.2;0.8,0.2;0.5,0.8").unwrap(),
            &sq,
        )
        .unwrap();
        let len = tri.segment_length_inside(Vec2::new(0.0, 0.2 + 1e-9), Vec2::new(1.0, 0.2 + 1e-9));
        assert!((len - 0.6).abs() < 1e-6);
        let disk = Region::new(RegionShape::parse("disk:0.5:0.5:0.25").unwrap(), &sq).unwrap();
        let len = disk.segment_length_inside(Vec2::new(0.0, 0.5), Vec2::new(1.0, 0.5));
        assert!((len - 0.5).abs() < 1e-14);
    }

    #[test]
    fn triangle_classification() {
        let sq = unit_square();
        let disk = Region::new(RegionShape::parse("disk:0.5:0.5:0.2").unwrap(), &sq).unwrap();
        let t = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| [a.into(), b.into(), c.into()];
        assert_eq!(disk.classify(t([0.5, 0.5], [0.55, 0.5], [0.5, 0.55])), Cover::Inside);
        assert_eq!(disk.classify(t([0.0, 0.0], [0.1, 0.0], [0.0, 0.1])), Cover::Outside);
        assert_eq!(disk.classify(t([0.0, 0.0], [1.0, 0.0], [0.0, 1.0])), Cover::Straddle);
        let c = Region::new(RegionShape::parse("complement:disk:0.5:0.5:0.2").unwrap(), &sq).unwrap();
        assert_eq!(c.classify(t([0.0, 0.0], [0.1, 0.0], [0.0, 0.1])), Cover::Inside);
    }
}
