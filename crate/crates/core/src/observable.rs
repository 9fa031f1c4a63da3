//! Isotropic observables `a(x, ω) = a₀(x)`.
//!
//! An [`ObservableSpec`] is the serialisable description; binding it to a
//! polygon with [`Observable::new`] validates the support, resolves regions
//! and caches the configuration-space mean `ā = (1/area D) ∫_D a₀`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::polygon::RationalPolygon;
use crate::quadrature::{adaptive_simpson, integrate_triangle};
use crate::region::{Region, RegionError, RegionShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("bump support must lie strictly inside the polygon: {0}")]
    SupportTouchesBoundary(String),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("cannot parse observable {0:?}")]
    Parse(String),
    #[error("invalid observable: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigFn {
    Cos,
    Sin,
}

/// `coef · f(2π (kx·x + ky·y))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coef: f64,
    pub kx: f64,
    pub ky: f64,
    pub func: TrigFn,
}

impl TrigTerm {
    pub fn cos(coef: f64, kx: f64, ky: f64) -> Self {
        Self { coef, kx, ky, func: TrigFn::Cos }
    }

    pub fn sin(coef: f64, kx: f64, ky: f64) -> Self {
        Self { coef, kx, ky, func: TrigFn::Sin }
    }

    fn phase(&self, p: Vec2) -> f64 {
        2.0 * PI * (self.kx * p.x + self.ky * p.y)
    }

    fn eval(&self, p: Vec2) -> f64 {
        let ph = self.phase(p);
        self.coef
            * match self.func {
                TrigFn::Cos => ph.cos(),
                TrigFn::Sin => ph.sin(),
            }
    }

    /// Exact `∫_0^len f(p + t d) dt` for unit `d`.
    fn line_integral(&self, p: Vec2, d: Vec2, len: f64) -> f64 {
        let phi0 = self.phase(p);
        let omega = 2.0 * PI * (self.kx * d.x + self.ky * d.y);
        let half = 0.5 * omega * len;
        let sinc = if half.abs() < 1e-4 {
            1.0 - half * half / 6.0
        } else {
            half.sin() / half
        };
        let mid = phi0 + half;
        self.coef
            * len
            * sinc
            * match self.func {
                TrigFn::Cos => mid.cos(),
                TrigFn::Sin => mid.sin(),
            }
    }
}

/// Serialisable description of an isotropic observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableSpec {
    Constant {
        value: f64,
    },
    /// `offset + Σ terms`.
    Trig {
        #[serde(default)]
        offset: f64,
        terms: Vec<TrigTerm>,
    },
    /// `amplitude · exp(1 − 1/(1 − |x − c|²/r²))` inside the disk, 0 outside.
    Bump {
        center: Vec2,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Region {
        region: RegionShape,
    },
}

fn one() -> f64 {
    1.0
}

impl ObservableSpec {
    /// Parses the command-line shorthands
    /// `const:C`, `cos:KX:KY`, `sin:KX:KY`, `bump:CX:CY:R` and
    /// `region:<region>` (see [`RegionShape::parse`]).
    pub fn parse(s: &str) -> Result<Self, ObservableError> {
        let bad = || ObservableError::Parse(s.to_string());
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>, ObservableError> {
            rest.split(':')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match head.trim().to_ascii_lowercase().as_str() {
            "const" | "constant" => match nums()?.as_slice() {
                &[c] => Ok(ObservableSpec::Constant { value: c }),
                _ => Err(bad()),
            },
            f @ ("cos" | "sin") => match nums()?.as_slice() {
                &[kx, ky] => {
                    let term = if f == "cos" {
                        TrigTerm::cos(1.0, kx, ky)
                    } else {
                        TrigTerm::sin(1.0, kx, ky)
                    };
                    Ok(ObservableSpec::Trig { offset: 0.0, terms: vec![term] })
                }
                _ => Err(bad()),
            },
            "bump" => match nums()?.as_slice() {
                &[cx, cy, r] => Ok(ObservableSpec::Bump {
                    center: Vec2::new(cx, cy),
                    radius: r,
                    amplitude: 1.0,
                }),
                _ => Err(bad()),
            },
            "region" => Ok(ObservableSpec::Region {
                region: RegionShape::parse(rest)?,
            }),
            _ => Err(bad()),
        }
    }

    /// Short human-readable label, stable across runs.
    pub fn label(&self) -> String {
        match self {
            ObservableSpec::Constant { value } => format!("const:{value}"),
            ObservableSpec::Trig { offset, terms } => {
                let mut s = String::new();
                if *offset != 0.0 {
                    s.push_str(&format!("{offset}+"));
                }
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        s.push('+');
                    }
                    let f = match t.func {
                        TrigFn::Cos => "cos",
                        TrigFn::Sin => "sin",
                    };
                    if t.coef != 1.0 {
                        s.push_str(&format!("{}*", t.coef));
                    }
                    s.push_str(&format!("{f}:{}:{}", t.kx, t.ky));
                }
                s
            }
            ObservableSpec::Bump { center, radius, .. } => {
                format!("bump:{}:{}:{}", center.x, center.y, radius)
            }
            ObservableSpec::Region { region } => format!("region:{}", region_label(region)),
        }
    }
}

fn region_label(r: &RegionShape) -> String {
    match r {
        RegionShape::LeftHalf => "left-half".into(),
        RegionShape::Disk { center, radius } => format!("disk:{}:{}:{}", center.x, center.y, radius),
        RegionShape::HalfPlanes { planes } => planes
            .iter()
            .map(|h| format!("halfplane:{}:{}:{}", h.normal.x, h.normal.y, h.offset))
            .collect::<Vec<_>>()
            .join("&"),
        RegionShape::Polygon { vertices } => format!(
            "polygon:{}",
            vertices
                .iter()
                .map(|v| format!("{},{}", v.x, v.y))
                .collect::<Vec<_>>()
                .join(";")
        ),
        RegionShape::Complement { inner } => format!("complement:{}", region_label(inner)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Kind {
    Constant(f64),
    Trig { offset: f64, terms: Vec<TrigTerm> },
    Bump { center: Vec2, radius: f64, amplitude: f64 },
    Indicator(Region),
}

/// An observable bound to a polygon, with its mean cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    spec: ObservableSpec,
    pub(crate) kind: Kind,
    mean: f64,
}

/// `∫_0^1 exp(1 − 1/(1 − s)) ds`; the bump integrates to `amplitude·π r²·BUMP_MASS`.
fn bump_mass() -> f64 {
    adaptive_simpson(
        &|s: f64| if s < 1.0 { (1.0 - 1.0 / (1.0 - s)).exp() } else { 0.0 },
        0.0,
        1.0,
        1e-15,
    )
}

fn bump_value(center: Vec2, radius: f64, amplitude: f64, p: Vec2) -> f64 {
    let s = (p - center).norm2() / (radius * radius);
    if s < 1.0 {
        amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// `∫_D f` for a smooth `f` via Duffy–Gauss rules on a refined ear
/// triangulation. `wavenumber` bounds the oscillation of `f`.
fn integrate_over_polygon<F: Fn(Vec2) -> f64>(poly: &RationalPolygon, wavenumber: f64, f: &F) -> f64 {
    let v = poly.vertices();
    let ears = poly.ear_triangles().expect("validated polygon admits ear clipping");
    let mut tris: Vec<[Vec2; 3]> = ears.iter().map(|t| [v[t[0]], v[t[1]], v[t[2]]]).collect();
    let max_edge = |t: &[Vec2; 3]| t[0].dist(t[1]).max(t[1].dist(t[2])).max(t[2].dist(t[0]));
    // keep ≲ 2 oscillations per subtriangle edge; the 20-point rule then
    // resolves the integrand to round-off
    while tris.iter().any(|t| max_edge(t) * wavenumber > 2.0) {
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let (ab, bc, ca) = (a.midpoint(b), b.midpoint(c), c.midpoint(a));
            next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        tris = next;
    }
    tris.iter().map(|[a, b, c]| integrate_triangle(*a, *b, *c, 20, f)).sum()
}

impl Observable {
    pub fn new(spec: ObservableSpec, poly: &RationalPolygon) -> Result<Self, ObservableError> {
        let (kind, mean) = match &spec {
            ObservableSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(ObservableError::Invalid("non-finite constant".into()));
                }
                (Kind::Constant(*value), *value)
            }
            ObservableSpec::Trig { offset, terms } => {
                let kmax = terms
                    .iter()
                    .map(|t| t.kx.hypot(t.ky))
                    .fold(0.0_f64, f64::max);
                let integral = integrate_over_polygon(poly, kmax, &|p| {
                    terms.iter().map(|t| t.eval(p)).sum::<f64>()
                });
                (
                    Kind::Trig { offset: *offset, terms: terms.clone() },
                    offset + integral / poly.area(),
                )
            }
            ObservableSpec::Bump { center, radius, amplitude } => {
                if !(*radius > 0.0) {
                    return Err(ObservableError::Invalid(format!("bump radius {radius}")));
                }
                if !poly.contains_strict(*center) {
                    return Err(ObservableError::SupportTouchesBoundary("center outside".into()));
                }
                let gap = poly.boundary_distance(*center);
                if gap <= *radius {
                    return Err(ObservableError::SupportTouchesBoundary(format!(
                        "distance to boundary {gap} ≤ radius {radius}"
                    )));
                }
                let mass = amplitude * PI * radius * radius * bump_mass();
                (
                    Kind::Bump { center: *center, radius: *radius, amplitude: *amplitude },
                    mass / poly.area(),
                )
            }
            ObservableSpec::Region { region } => {
                let r = Region::new(region.clone(), poly)?;
                let mean = r.area_fraction();
                (Kind::Indicator(r), mean)
            }
        };
        Ok(Self { spec, kind, mean })
    }

    pub fn spec(&self) -> &ObservableSpec {
        &self.spec
    }

    /// `ā`, the configuration-space mean of `a₀` over the polygon.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    pub fn region(&self) -> Option<&Region> {
        match &self.kind {
            Kind::Indicator(r) => Some(r),
            _ => None,
        }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Trig { offset, terms } => offset + terms.iter().map(|t| t.eval(p)).sum::<f64>(),
            Kind::Bump { center, radius, amplitude } => bump_value(*center, *radius, *amplitude, p),
            Kind::Indicator(r) => {
                if r.contains(p) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_0^len a₀(p + t d) dt` along a billiard segment (unit `d`).
    ///
    /// Trigonometric terms use closed-form antiderivatives, indicators use the
    /// exact chord length and bumps adaptive Simpson on the chord through the
    /// support (tolerance `1e-10`).
    pub fn segment_integral(&self, p: Vec2, d: Vec2, len: f64) -> f64 {
        match &self.kind {
            Kind::Constant(c) => c * len,
            Kind::Trig { offset, terms } => {
                offset * len + terms.iter().map(|t| t.line_integral(p, d, len)).sum::<f64>()
            }
            Kind::Indicator(r) => r.segment_length_inside(p, p + d * len),
            Kind::Bump { center, radius, amplitude } => {
                // chord of the support disk
                let f = p - *center;
                let b = f.dot(d);
                let c = f.norm2() - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return 0.0;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq).max(0.0);
                let t1 = (-b + sq).min(len);
                if t1 <= t0 {
                    return 0.0;
                }
                adaptive_simpson(
                    &|t: f64| bump_value(*center, *radius, *amplitude, p + d * t),
                    t0,
                    t1,
                    1e-10,
                )
            }
        }
    }
}
