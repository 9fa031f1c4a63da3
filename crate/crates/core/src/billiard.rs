//! Specular billiard flow on `S*D = D × S¹`, time averages of isotropic
//! observables and Liouville Monte Carlo.
//!
//! Trajectories that strike a vertex are never continued: the reflection law
//! at a corner is arbitrary, so the flow reports a vertex event and lets the
//! caller decide (Monte Carlo callers resample).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::geom::Vec2;
use crate::observable::Observable;
use crate::polygon::{RationalPolygon, ReflectionGroup};

/// Hits closer than this to a vertex are reported as vertex events.
pub const DEFAULT_VERTEX_RADIUS: f64 = 1e-9;
pub const DEFAULT_MAX_BOUNCES: u64 = 10_000_000;
/// Monte Carlo aborts when more than this fraction of samples hit a vertex.
pub const MAX_VERTEX_DISCARD_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("start point lies on side {side} with a direction that does not enter the polygon")]
    StuckAtBoundary { side: usize },
    #[error("trajectory struck vertex {vertex} at time {time}")]
    VertexEncounter {
        vertex: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error("exceeded {0} bounces")]
    MaxBounces(u64),
    #[error("ray from {0:?} along {1:?} left the polygon")]
    Escaped(Vec2, Vec2),
    #[error("start point {0:?} is outside the polygon")]
    OutsideDomain(Vec2),
    #[error("{discards} of {samples} samples struck a vertex")]
    TooManyVertexEvents { discards: u64, samples: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// A point of the unit tangent bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub position: Vec2,
    pub direction: Vec2,
}

impl PhasePoint {
    /// Normalises `direction`.
    pub fn new(position: Vec2, direction: Vec2) -> Self {
        Self {
            position,
            direction: direction.normalized(),
        }
    }

    /// Direction `ω = e^{2πiφ}`.
    pub fn from_phase(position: Vec2, phi: f64) -> Self {
        Self::new(position, Vec2::from_angle(2.0 * PI * phi))
    }

    pub fn reversed(self) -> Self {
        Self {
            position: self.position,
            direction: -self.direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vec2,
    pub end: Vec2,
    pub direction: Vec2,
    /// Side struck at `end`; `None` when the flow stopped inside the polygon.
    pub side: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub total_time: f64,
}

/// Outcome of casting a ray to the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Side { point: Vec2, side: usize, time: f64 },
    Vertex { vertex: usize, time: f64 },
}

/// `d − 2(d·n)n`, renormalised.
pub fn reflect(direction: Vec2, normal: Vec2) -> Vec2 {
    (direction - normal * (2.0 * direction.dot(normal))).normalized()
}

/// `{γθ : γ ∈ Γ}`.
pub fn direction_orbit(group: &ReflectionGroup, theta: Vec2) -> Vec<Vec2> {
    group.orbit(theta)
}

/// Billiard table: a polygon with the flow's numerical settings.
#[derive(Debug, Clone)]
pub struct Billiard<'a> {
    poly: &'a RationalPolygon,
    normals: Vec<Vec2>,
    pub vertex_radius: f64,
    pub max_bounces: u64,
}

enum Stop {
    Vertex { vertex: usize, time: f64 },
    Err(FlowError),
}

impl<'a> Billiard<'a> {
    pub fn new(poly: &'a RationalPolygon) -> Self {
        Self {
            poly,
            normals: (0..poly.len()).map(|i| poly.side_normal(i)).collect(),
            vertex_radius: DEFAULT_VERTEX_RADIUS,
            max_bounces: DEFAULT_MAX_BOUNCES,
        }
    }

    pub fn polygon(&self) -> &RationalPolygon {
        self.poly
    }

    /// Side whose segment contains `p` (within `1e-12`), if any.
    fn side_of(&self, p: Vec2) -> Option<usize> {
        (0..self.poly.len()).find(|&i| {
            let (a, b) = self.poly.side(i);
            crate::geom::point_segment_distance(p, a, b) <= 1e-12
        })
    }

    fn cast(&self, pos: Vec2, dir: Vec2, exclude: Option<usize>) -> Result<Hit, FlowError> {
        let mut best: Option<(f64, usize, f64)> = None;
        for i in 0..self.poly.len() {
            if Some(i) == exclude {
                continue;
            }
            let (a, b) = self.poly.side(i);
            let e = b - a;
            let den = dir.cross(e);
            if den == 0.0 {
                continue;
            }
            let ap = a - pos;
            let t = ap.cross(e) / den;
            let s = ap.cross(dir) / den;
            // slack on s so that rays through a vertex cannot slip between
            // the two adjacent sides
            let slack = self.vertex_radius / e.norm();
            if t > 0.0 && s >= -slack && s <= 1.0 + slack && best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, i, s.clamp(0.0, 1.0)));
            }
        }
        let (time, side, s) = best.ok_or(FlowError::Escaped(pos, dir))?;
        let (a, b) = self.poly.side(side);
        let point = a.lerp(b, s);
        let k = self.poly.len();
        if point.dist(a) <= self.vertex_radius {
            return Ok(Hit::Vertex { vertex: side, time });
        }
        if point.dist(b) <= self.vertex_radius {
            return Ok(Hit::Vertex { vertex: (side + 1) % k, time });
        }
        Ok(Hit::Side { point, side, time })
    }

    /// First boundary intersection along the ray from `p`.
    pub fn next_hit(&self, p: &PhasePoint) -> Result<Hit, FlowError> {
        let on = self.side_of(p.position);
        if let Some(s) = on {
            if p.direction.dot(self.normals[s]) >= -1e-12 {
                return Err(FlowError::StuckAtBoundary { side: s });
            }
        } else if !self.poly.contains_strict(p.position) {
            return Err(FlowError::OutsideDomain(p.position));
        }
        self.cast(p.position, p.direction, on)
    }

    /// Core loop: calls `visit(start, direction, length)` for every piece of
    /// the path and returns the final phase point and bounce count.
    fn run<F: FnMut(Vec2, Vec2, f64, Option<usize>)>(
        &self,
        p: &PhasePoint,
        t: f64,
        mut visit: F,
    ) -> Result<(PhasePoint, u64), Stop> {
        let mut pos = p.position;
        let mut dir = p.direction;
        let mut side = self.side_of(pos);
        if let Some(s) = side {
            if t > 0.0 && dir.dot(self.normals[s]) >= -1e-12 {
                return Err(Stop::Err(FlowError::StuckAtBoundary { side: s }));
            }
        } else if !self.poly.contains_strict(pos) {
            return Err(Stop::Err(FlowError::OutsideDomain(pos)));
        }
        let mut remaining = t;
        let mut bounces = 0u64;
        let mut elapsed = 0.0;
        while remaining > 0.0 {
            let hit = self.cast(pos, dir, side).map_err(Stop::Err)?;
            match hit {
                Hit::Side { time, .. } | Hit::Vertex { time, .. } if time >= remaining => {
                    visit(pos, dir, remaining, None);
                    pos += dir * remaining;
                    break;
                }
                Hit::Vertex { vertex, time } => {
                    visit(pos, dir, time, None);
                    return Err(Stop::Vertex {
                        vertex,
                        time: elapsed + time,
                    });
                }
                Hit::Side { point, side: s, time } => {
                    visit(pos, dir, time, Some(s));
                    pos = point;
                    dir = reflect(dir, self.normals[s]);
                    side = Some(s);
                    remaining -= time;
                    elapsed += time;
                    bounces += 1;
                    if bounces > self.max_bounces {
                        return Err(Stop::Err(FlowError::MaxBounces(self.max_bounces)));
                    }
                }
            }
        }
        Ok((PhasePoint { position: pos, direction: dir }, bounces))
    }

    /// `Φ^t(p)` together with the traversed path.
    pub fn evolve(&self, p: &PhasePoint, t: f64) -> Result<(PhasePoint, Trajectory), FlowError> {
        if !(t >= 0.0) {
            return Err(FlowError::Invalid(format!("negative time {t}")));
        }
        let mut traj = Trajectory::default();
        let res = self.run(p, t, |start, dir, len, side| {
            traj.segments.push(Segment {
                start,
                end: start + dir * len,
                direction: dir,
                side,
            });
            traj.total_time += len;
        });
        match res {
            Ok((q, _)) => Ok((q, traj)),
            Err(Stop::Vertex { vertex, time }) => Err(FlowError::VertexEncounter {
                vertex,
                time,
                partial: Box::new(traj),
            }),
            Err(Stop::Err(e)) => Err(e),
        }
    }

    /// Final phase point and bounce count, without recording the path.
    pub fn evolve_quiet(&self, p: &PhasePoint, t: f64) -> Result<(PhasePoint, u64), FlowError> {
        self.run(p, t, |_, _, _, _| {}).map_err(|s| match s {
            Stop::Vertex { vertex, time } => FlowError::VertexEncounter {
                vertex,
                time,
                partial: Box::default(),
            },
            Stop::Err(e) => e,
        })
    }

    /// Follows the flow for `bounces` reflections and calls `visit` with
    /// every segment direction. Returns the time travelled.
    pub fn bounce_directions<F: FnMut(Vec2)>(
        &self,
        p: &PhasePoint,
        bounces: u64,
        mut visit: F,
    ) -> Result<f64, FlowError> {
        let mut cur = *p;
        let mut side = self.side_of(cur.position);
        let mut elapsed = 0.0;
        for _ in 0..bounces {
            visit(cur.direction);
            match self.cast(cur.position, cur.direction, side)? {
                Hit::Vertex { vertex, time } => {
                    return Err(FlowError::VertexEncounter {
                        vertex,
                        time: elapsed + time,
                        partial: Box::default(),
                    })
                }
                Hit::Side { point, side: s, time } => {
                    cur = PhasePoint {
                        position: point,
                        direction: reflect(cur.direction, self.normals[s]),
                    };
                    side = Some(s);
                    elapsed += time;
                }
            }
        }
        Ok(elapsed)
    }

    /// `a^T(p) = (1/2T) ∫_{−T}^{T} a₀(x(t)) dt`; the backward half is the
    /// forward flow of the reversed direction.
    pub fn time_average(&self, obs: &Observable, p: &PhasePoint, t: f64) -> Result<f64, FlowError> {
        if !(t > 0.0) {
            return Err(FlowError::Invalid(format!("averaging time {t} must be positive")));
        }
        if obs.is_constant() {
            return Ok(obs.mean());
        }
        let mut total = 0.0;
        for q in [*p, p.reversed()] {
            self.run(&q, t, |start, dir, len, _| total += obs.segment_integral(start, dir, len))
                .map_err(|s| match s {
                    Stop::Vertex { vertex, time } => FlowError::VertexEncounter {
                        vertex,
                        time,
                        partial: Box::default(),
                    },
                    Stop::Err(e) => e,
                })?;
        }
        Ok(total / (2.0 * t))
    }
}

/// Uniform sampler for the normalised Liouville measure `dx dφ / area(D)`.
///
/// Sample `i` always draws from its own ChaCha stream, so results do not
/// depend on how samples are distributed over threads.
#[derive(Debug, Clone, Copy)]
pub struct LiouvilleSampler {
    pub seed: u64,
}

impl LiouvilleSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Rejection from the bounding box; returns the point and the number of
    /// rejected proposals.
    pub fn draw<R: Rng>(&self, poly: &RationalPolygon, rng: &mut R) -> (PhasePoint, u64) {
        let (lo, hi) = poly.bbox();
        let mut rejected = 0;
        loop {
            let x = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if poly.contains_strict(x) {
                let phi: f64 = rng.gen();
                return (PhasePoint::from_phase(x, phi), rejected);
            }
            rejected += 1;
        }
    }
}

/// Monte Carlo estimates of the classical functionals at one averaging time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Estimate {
    pub t: f64,
    pub samples: usize,
    /// `∫ |a^T|² dμ`.
    pub estimate: f64,
    pub stderr: f64,
    /// `∫ |a^T − ā|² dμ`.
    pub key_bound: f64,
    pub key_bound_stderr: f64,
    /// `∫ a^T dμ`, equal to `ā` by invariance of μ.
    pub mean_average: f64,
    pub mean_average_stderr: f64,
    pub abar: f64,
    pub vertex_discards: u64,
    pub rejections: u64,
}

/// Welford accumulator; identical inputs leave the mean bit-exact.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Estimates `∫|a^T|² dμ` and `∫|a^T − ā|² dμ` over `samples` Liouville draws.
/// Samples that strike a vertex are redrawn from the same stream.
pub fn lemma1_functional(
    poly: &RationalPolygon,
    obs: &Observable,
    t: f64,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Lemma1Estimate, FlowError> {
    if samples < 100 {
        return Err(FlowError::Invalid(format!("need at least 100 samples, got {samples}")));
    }
    let table = Billiard::new(poly);
    let sampler = LiouvilleSampler::new(seed);
    let per_sample_cap = (samples as f64 * MAX_VERTEX_DISCARD_FRACTION).ceil() as u64 + 1;
    let results = exec.map(samples, |i| -> Result<(f64, u64, u64), FlowError> {
        let mut rng = sampler.stream(i as u64);
        let mut discards = 0;
        let mut rejected = 0;
        loop {
            let (p, r) = sampler.draw(poly, &mut rng);
            rejected += r;
            match table.time_average(obs, &p, t) {
                Ok(v) => return Ok((v, discards, rejected)),
                Err(FlowError::VertexEncounter { .. }) => {
                    discards += 1;
                    if discards > per_sample_cap {
                        return Err(FlowError::TooManyVertexEvents { discards, samples });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    });
    let abar = obs.mean();
    let mut sq = Moments::default();
    let mut dev = Moments::default();
    let mut lin = Moments::default();
    let mut discards = 0;
    let mut rejections = 0;
    for r in results {
        let (v, d, rej) = r?;
        sq.push(v * v);
        dev.push((v - abar) * (v - abar));
        lin.push(v);
        discards += d;
        rejections += rej;
    }
    if discards as f64 > MAX_VERTEX_DISCARD_FRACTION * samples as f64 {
        return Err(FlowError::TooManyVertexEvents { discards, samples });
    }
    Ok(Lemma1Estimate {
        t,
        samples,
        estimate: sq.mean,
        stderr: sq.stderr(),
        key_bound: dev.mean,
        key_bound_stderr: dev.stderr(),
        mean_average: lin.mean,
        mean_average_stderr: lin.stderr(),
        abar,
        vertex_discards: discards,
        rejections,
    })
}
