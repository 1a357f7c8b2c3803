//! Planar geometry shared by every stage: points, polylines, arc-length
//! resampling, point-to-segment distance and least-squares rigid alignment.
//!
//! Coordinates are continuous with pixel centers at integer positions,
//! `x` = column and `y` = row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive polyline vertices closer than this are considered coincident.
pub const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_squared(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Lexicographic key on (y, x), used to orient curves deterministically.
    pub(crate) fn row_major_lt(self, other: Point2) -> bool {
        (self.y, self.x) < (other.y, other.x)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// An ordered polygonal curve with at least two distinct vertices.
///
/// Serialized as `{"points": [[x, y], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolylineRepr", into = "PolylineRepr")]
pub struct Polyline {
    points: Vec<Point2>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolylineRepr {
    points: Vec<Point2>,
}

impl TryFrom<PolylineRepr> for Polyline {
    type Error = Error;

    fn try_from(r: PolylineRepr) -> Result<Self> {
        Polyline::new(r.points)
    }
}

impl From<Polyline> for PolylineRepr {
    fn from(p: Polyline) -> Self {
        PolylineRepr { points: p.points }
    }
}

impl Polyline {
    /// Validates and wraps a vertex list.
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateGeometry(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::DegenerateGeometry(format!(
                "non-finite coordinate ({}, {})",
                p.x, p.y
            )));
        }
        if let Some(i) = points
            .windows(2)
            .position(|w| w[0].distance(w[1]) <= MIN_SEPARATION)
        {
            return Err(Error::DegenerateGeometry(format!(
                "consecutive points {i} and {} coincide",
                i + 1
            )));
        }
        Ok(Polyline { points })
    }

    /// Like [`Polyline::new`] but silently drops consecutive duplicates first.
    pub fn from_points_dedup(points: impl IntoIterator<Item = Point2>) -> Result<Self> {
        let mut out: Vec<Point2> = Vec::new();
        for p in points {
            if out
                .last()
                .map_or(true, |last| last.distance(p) > MIN_SEPARATION)
            {
                out.push(p);
            }
        }
        Polyline::new(out)
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

    /// Always false; a valid polyline has at least two points.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        polyline_length(self)
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline { points }
    }

    /// Cumulative arc length at each vertex; first entry is 0.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        acc.push(0.0);
        for w in self.points.windows(2) {
            s += w[0].distance(w[1]);
            acc.push(s);
        }
        acc
    }

    /// Point at arc length `s` from the first vertex (clamped to the curve).
    pub fn point_at(&self, s: f64) -> Point2 {
        let cum = self.cumulative_lengths();
        point_at_with(&self.points, &cum, s)
    }

    /// Closest point on the curve to `q`: returns (arc-length offset, distance).
    pub fn project(&self, q: Point2) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        let mut s = 0.0;
        for w in self.points.windows(2) {
            let (t, d) = segment_projection(q, w[0], w[1]);
            let seg = w[0].distance(w[1]);
            if d < best.1 {
                best = (s + t * seg, d);
            }
            s += seg;
        }
        best
    }

    /// Minimal distance from `q` to any segment of the curve.
    pub fn distance_to(&self, q: Point2) -> f64 {
        self.points
            .windows(2)
            .map(|w| point_segment_distance(q, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Sub-curve between arc lengths `from` and `to`. When `from > to` the
    /// result runs backwards. Returns the raw vertex list, which may hold a
    /// single point if the interval is empty.
    pub fn sub_points(&self, from: f64, to: f64) -> Vec<Point2> {
        let cum = self.cumulative_lengths();
        let total = *cum.last().unwrap_or(&0.0);
        let (a, b) = (from.clamp(0.0, total), to.clamp(0.0, total));
        let (lo, hi, rev) = if a <= b { (a, b, false) } else { (b, a, true) };
        let mut out = vec![point_at_with(&self.points, &cum, lo)];
        for (i, &c) in cum.iter().enumerate() {
            if c > lo && c < hi {
                out.push(self.points[i]);
            }
        }
        out.push(point_at_with(&self.points, &cum, hi));
        if rev {
            out.reverse();
        }
        out
    }

    /// Moving-average smoothing with a half window of `radius` vertices;
    /// endpoints stay fixed.
    pub fn smoothed(&self, radius: usize) -> Polyline {
        let n = self.points.len();
        if radius == 0 || n < 3 {
            return self.clone();
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i == 0 || i == n - 1 {
                out.push(self.points[i]);
                continue;
            }
            let r = radius.min(i).min(n - 1 - i);
            let (mut sx, mut sy) = (0.0, 0.0);
            for p in &self.points[i - r..=i + r] {
                sx += p.x;
                sy += p.y;
            }
            let k = (2 * r + 1) as f64;
            out.push(Point2::new(sx / k, sy / k));
        }
        Polyline::from_points_dedup(out).unwrap_or_else(|_| self.clone())
    }
}

fn point_at_with(points: &[Point2], cum: &[f64], s: f64) -> Point2 {
    let total = cum[cum.len() - 1];
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return points[points.len() - 1];
    }
    // First vertex index with cum > s.
    let hi = cum.partition_point(|&c| c <= s).min(points.len() - 1);
    let lo = hi - 1;
    let seg = cum[hi] - cum[lo];
    let t = if seg > 0.0 { (s - cum[lo]) / seg } else { 0.0 };
    points[lo].lerp(points[hi], t)
}

/// Sum of Euclidean segment lengths.
pub fn polyline_length(p: &Polyline) -> f64 {
    p.points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Resamples `p` to `k` points at equal arc-length spacing. The first and
/// last vertices are reproduced exactly.
pub fn resample(p: &Polyline, k: usize) -> Result<Polyline> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "resample count must be at least 2, got {k}"
        )));
    }
    let cum = p.cumulative_lengths();
    let total = cum[cum.len() - 1];
    let mut out = Vec::with_capacity(k);
    out.push(p.first());
    let mut seg = 1;
    for i in 1..k - 1 {
        let s = total * i as f64 / (k - 1) as f64;
        while seg < cum.len() - 1 && cum[seg] <= s {
            seg += 1;
        }
        let len = cum[seg] - cum[seg - 1];
        let t = if len > 0.0 { (s - cum[seg - 1]) / len } else { 0.0 };
        out.push(p.points[seg - 1].lerp(p.points[seg], t));
    }
    out.push(p.last());
    Polyline::from_points_dedup(out)
}

/// Parameter `t ∈ [0, 1]` of the closest point on `[a, b]` and the distance.
fn segment_projection(q: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 <= 0.0 {
        return (0.0, q.distance(a));
    }
    let t = (((q.x - a.x) * dx + (q.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    (t, q.distance(a.lerp(b, t)))
}

/// Euclidean distance from `q` to the closed segment `[a, b]`; degrades to
/// `|q - a|` when the segment is a point.
pub fn point_segment_distance(q: Point2, a: Point2, b: Point2) -> f64 {
    segment_projection(q, a, b).1
}

/// Result of a least-squares rigid fit of one curve onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidAlignment {
    /// Counter-clockwise in the (x, y) frame, radians.
    pub rotation: f64,
    pub translation: Point2,
    /// `src` after applying the rotation and translation.
    pub residual_curve: Polyline,
}

impl RigidAlignment {
    pub fn apply(&self, p: Point2) -> Point2 {
        rotate_translate(p, self.rotation, self.translation)
    }
}

fn rotate_translate(p: Point2, theta: f64, t: Point2) -> Point2 {
    let (s, c) = theta.sin_cos();
    Point2::new(c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y)
}

/// Rotation + translation (no scaling) minimizing the summed squared
/// distance between corresponding points of `src` and `dst`, mapping `src`
/// onto `dst`.
pub fn rigid_align(src: &Polyline, dst: &Polyline) -> Result<RigidAlignment> {
    if src.len() != dst.len() {
        return Err(Error::InvalidArgument(format!(
            "rigid_align needs equal point counts, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let centroid = |pts: &[Point2]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        Point2::new(sx / n, sy / n)
    };
    let cs = centroid(src.points());
    let cd = centroid(dst.points());

    let spread: f64 = src.points().iter().map(|p| p.distance_squared(cs)).sum();
    // RMS radius below a micro-pixel carries no orientation.
    if spread / n <= 1e-12 {
        return Err(Error::DegenerateGeometry(
            "source points are all coincident".into(),
        ));
    }

    let (mut dot, mut cross) = (0.0, 0.0);
    for (s, d) in src.points().iter().zip(dst.points()) {
        let (sx, sy) = (s.x - cs.x, s.y - cs.y);
        let (dx, dy) = (d.x - cd.x, d.y - cd.y);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    let rotation = cross.atan2(dot);
    let rc = rotate_translate(cs, rotation, Point2::default());
    let translation = Point2::new(cd.x - rc.x, cd.y - rc.y);
    let moved = src
        .points()
        .iter()
        .map(|&p| rotate_translate(p, rotation, translation))
        .collect();
    Ok(RigidAlignment {
        rotation,
        translation,
        residual_curve: Polyline::new(moved)?,
    })
}

/// Root-mean-square distance between corresponding points.
pub fn rms_distance(a: &Polyline, b: &Polyline) -> f64 {
    let n = a.len().min(b.len());
    let sum: f64 = a
        .points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| p.distance_squared(*q))
        .sum();
    (sum / n as f64).sqrt()
}
