//! Polygon primitives in pixel space.
//!
//! Coordinates follow the image convention: `x` grows to the right and `y`
//! grows downwards. Orientation is defined purely by the sign of the shoelace
//! sum, so a ring is called counter-clockwise when [`signed_area`] is positive
//! (the unit square `(0,0),(1,0),(1,1),(0,1)` is CCW in this frame).

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate-ring: {0}")]
    DegenerateRing(String),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("invalid-interval: resampling interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
    #[error("insufficient-points: need at least {needed} points, ring has {got}")]
    InsufficientPoints { needed: usize, got: usize },
}

/// A point (or displacement) in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Point2) -> f64 {
        let d = self - other;
        d.dot(d)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.dot(ab);
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Closed ring of points. The first point is not repeated at the end.
///
/// Construction checks that there are at least three points, that every
/// coordinate is finite and that no two cyclically consecutive points
/// coincide. Simplicity is not enforced: contours traced from masks may
/// touch themselves at pinch vertices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ring {
    points: Vec<Point2>,
}

impl Ring {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeometryError> {
        if points.len() < 3 {
            return Err(GeometryError::DegenerateRing(format!(
                "{} points, at least 3 required",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        let n = points.len();
        for i in 0..n {
            if points[i] == points[(i + 1) % n] {
                return Err(GeometryError::DegenerateRing(format!(
                    "points {} and {} coincide",
                    i,
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { points })
    }

    /// Builds a ring after dropping consecutive duplicates, including a
    /// closing point equal to the first one.
    pub fn from_points_dedup(mut points: Vec<Point2>) -> Result<Self, GeometryError> {
        points.dedup();
        while points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point at a cyclic index.
    pub fn at(&self, i: isize) -> Point2 {
        let n = self.points.len() as isize;
        self.points[i.rem_euclid(n) as usize]
    }

    /// Iterator over the `(start, end)` pairs of every edge, closing edge included.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Same ring traversed the other way, still starting at the first point.
    pub fn reversed(&self) -> Ring {
        let mut points = self.points.clone();
        points[1..].reverse();
        Ring { points }
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(self)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.distance(b)).sum()
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Smallest distance from `p` to any edge of the ring.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks that no two non-adjacent edges intersect. Quadratic.
    pub fn is_simple(&self) -> bool {
        let n = self.points.len();
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = (self.points[j], self.points[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Applies `f` to every point, re-validating the result.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Result<Ring, GeometryError> {
        Ring::new(self.points.iter().map(|&p| f(p)).collect())
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Polygon with an exterior ring (positive area) and zero or more holes
/// (negative area). Orientation is normalised on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolygonWithHoles {
    exterior: Ring,
    holes: Vec<Ring>,
}

impl PolygonWithHoles {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Result<Self, GeometryError> {
        let exterior = if exterior.signed_area() < 0.0 {
            exterior.reversed()
        } else {
            exterior
        };
        let (lo, hi) = exterior.bounds();
        let holes = holes
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                let (hlo, hhi) = h.bounds();
                if hlo.x < lo.x || hlo.y < lo.y || hhi.x > hi.x || hhi.y > hi.y {
                    return Err(GeometryError::DegenerateRing(format!(
                        "hole {i} extends outside the exterior bounds"
                    )));
                }
                Ok(if h.signed_area() > 0.0 { h.reversed() } else { h })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { exterior, holes })
    }

    pub fn from_exterior(exterior: Ring) -> Self {
        Self::new(exterior, Vec::new()).expect("a polygon without holes is always valid")
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    /// Exterior followed by the holes.
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn vertex_count(&self) -> usize {
        self.rings().map(Ring::len).sum()
    }

    /// Exterior area minus hole areas.
    pub fn area(&self) -> f64 {
        self.rings().map(Ring::signed_area).sum()
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        self.exterior.bounds()
    }
}

/// A polygon tagged with a class id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPolygon {
    pub class: u8,
    pub polygon: PolygonWithHoles,
}

/// Shoelace signed area; positive iff the ring is counter-clockwise.
pub fn signed_area(ring: &Ring) -> f64 {
    let pts = ring.points();
    let n = pts.len();
    // Translate to the first point to limit cancellation on large coordinates.
    let origin = pts[0];
    let mut twice = 0.0;
    for i in 0..n {
        let a = pts[i] - origin;
        let b = pts[(i + 1) % n] - origin;
        twice += a.cross(b);
    }
    twice * 0.5
}

/// Douglas-Peucker simplification of a closed ring.
///
/// A zero tolerance returns the ring unchanged. Otherwise the ring is opened at its lexicographically smallest vertex (min `x`, then
/// min `y`), which is duplicated at both ends of the open sequence so the
/// result does not depend on where the input ring starts. Every dropped point
/// lies within `epsilon` of the output segment that spans it. The output is a
/// cyclic subsequence of the input starting at the anchor and never has fewer
/// than three points.
pub fn dp_simplify(ring: &Ring, epsilon: f64) -> Result<Ring, GeometryError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GeometryError::InvalidTolerance(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(ring.clone());
    }
    let pts = ring.points();
    let n = pts.len();
    let anchor = lexicographic_min(pts);
    let open: Vec<Point2> = (0..=n).map(|k| pts[(anchor + k) % n]).collect();

    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[n] = true;
    let mut stack = vec![(0usize, n)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (open[lo], open[hi]);
        let mut best = lo;
        let mut best_dist = -1.0;
        for (k, &p) in open.iter().enumerate().take(hi).skip(lo + 1) {
            let d = point_segment_distance(p, a, b);
            if d > best_dist {
                best_dist = d;
                best = k;
            }
        }
        if best_dist > epsilon {
            keep[best] = true;
            stack.push((best, hi));
            stack.push((lo, best));
        }
    }

    let mut kept: Vec<usize> = (0..n).filter(|&k| keep[k]).collect();
    if kept.len() < 3 {
        kept = fallback_triangle(&open[..n]);
    }
    if kept.len() < 3 {
        return Err(GeometryError::DegenerateRing(
            "ring has fewer than three distinct points".into(),
        ));
    }
    Ring::new(kept.into_iter().map(|k| open[k]).collect())
}

fn lexicographic_min(pts: &[Point2]) -> usize {
    let mut best = 0;
    for (i, p) in pts.iter().enumerate().skip(1) {
        let b = pts[best];
        if p.x < b.x || (p.x == b.x && p.y < b.y) {
            best = i;
        }
    }
    best
}

// Anchor, the point farthest from it, and the point farthest from the chord
// joining those two. Indices refer to the anchored open sequence.
fn fallback_triangle(open: &[Point2]) -> Vec<usize> {
    let a = open[0];
    let far = (1..open.len())
        .max_by(|&i, &j| {
            a.distance_sq(open[i])
                .total_cmp(&a.distance_sq(open[j]))
                .then(j.cmp(&i))
        })
        .unwrap_or(0);
    let b = open[far];
    let third = (1..open.len())
        .filter(|&i| i != far && open[i] != a && open[i] != b)
        .max_by(|&i, &j| {
            point_segment_distance(open[i], a, b)
                .total_cmp(&point_segment_distance(open[j], a, b))
                .then(j.cmp(&i))
        });
    let mut idx = vec![0, far];
    idx.extend(third);
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Output of [`resample_ring`]: the dense ring plus flags marking the points
/// that were vertices of the input ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub ring: Ring,
    pub seeds: Vec<bool>,
}

/// Inserts points every `interval` pixels along each edge of `ring`.
///
/// Each edge contributes its start vertex (flagged as a seed) followed by
/// points at `k * interval` for `k = 1..=floor(q / interval)`, where `q` is the
/// edge length. A point landing on the edge end is skipped because the next
/// edge emits that vertex; "landing on" means within `1e-9 * interval`.
pub fn resample_ring(ring: &Ring, interval: f64) -> Result<Resampled, GeometryError> {
    if !interval.is_finite() || interval <= 0.0 {
        return Err(GeometryError::InvalidInterval(interval));
    }
    let snap = 1e-9 * interval;
    let mut points = Vec::new();
    let mut seeds = Vec::new();
    for (a, b) in ring.edges() {
        let v = b - a;
        let q = v.norm();
        points.push(a);
        seeds.push(true);
        let steps = (q / interval).floor() as usize;
        for k in 1..=steps {
            let along = k as f64 * interval;
            if q - along <= snap {
                break;
            }
            points.push(a + v * (along / q));
            seeds.push(false);
        }
    }
    Ok(Resampled {
        ring: Ring::new(points)?,
        seeds,
    })
}

/// Interior angle at every point, measured between the rays to the
/// neighbours `s` positions before and after (indices wrap around).
///
/// A straight run gives `π`, a right-angle corner `π/2`. When either ray has
/// zero length the point is treated as straight and gets `π`.
pub fn interior_angles(ring: &Ring, s: usize) -> Result<Vec<f64>, GeometryError> {
    let n = ring.len();
    let needed = 2 * s + 1;
    if s == 0 || n < needed {
        return Err(GeometryError::InsufficientPoints {
            needed: needed.max(3),
            got: n,
        });
    }
    let pts = ring.points();
    Ok((0..n)
        .map(|i| {
            let here = pts[i];
            let back = pts[(i + n - s) % n] - here;
            let fwd = pts[(i + s) % n] - here;
            angle_between(back, fwd)
        })
        .collect())
}

/// Unsigned angle between two vectors in `[0, π]`; `π` if either is zero.
pub fn angle_between(u: Point2, v: Point2) -> f64 {
    if u.norm() == 0.0 || v.norm() == 0.0 {
        return std::f64::consts::PI;
    }
    u.cross(v).abs().atan2(u.dot(v))
}
