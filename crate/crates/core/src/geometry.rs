//! Platform zone construction and point-membership queries.
//!
//! All geometry lives in image coordinates (pixels). The platform is given by
//! four corners: `tl`/`tr` on the tunnel-side edge, `bl`/`br` on the near
//! edge, with the left side against the wall and the right side facing the
//! track. Three zones are derived from them:
//!
//! - Zone A, the wall-proximal strip `(tl, tl_alpha, bl_beta, bl)`;
//! - Zone B, the yellow-line-proximal strip `(tr_alpha, tr, br, br_beta)`;
//! - Zone C, the far-end band `(tl, tr, q_r, q_l)` between the top edge and
//!   its inward parallel at distance `offset_d`, clipped by the side edges.
//!
//! Zone C overlaps A and B near the top edge; membership is reported per
//! zone.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SceneConfig;

/// Absolute tolerance (scaled by coordinate magnitude) for "on the boundary".
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("offset {offset_d} reaches past the platform ({side} edge parameter {t:.4})")]
    Clipping { offset_d: f64, side: &'static str, t: f64 },
}

/// A 2D point or vector. Serialized as `[x, y]`.
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

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        self + (o - self) * t
    }

    pub fn midpoint(self, o: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        Point2::new(a[0], a[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Twice the signed area of triangle `(a, b, c)`; positive when counter-clockwise
/// in a y-up frame.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        if len2 == 0.0 {
            return p.distance(self.a);
        }
        let t = ((p - self.a).dot(d) / len2).clamp(0.0, 1.0);
        p.distance(self.a + d * t)
    }

    /// True when the two segments cross at a single interior point of both.
    pub fn properly_intersects(&self, o: &Segment) -> bool {
        let o1 = orient(self.a, self.b, o.a);
        let o2 = orient(self.a, self.b, o.b);
        let o3 = orient(o.a, o.b, self.a);
        let o4 = orient(o.a, o.b, self.b);
        o1 * o2 < 0.0 && o3 * o4 < 0.0
    }

    /// Inclusive intersection test (touching and collinear overlap count).
    pub fn intersects(&self, o: &Segment) -> bool {
        if self.properly_intersects(o) {
            return true;
        }
        o.distance_to(self.a) <= tol(self.a)
            || o.distance_to(self.b) <= tol(self.b)
            || self.distance_to(o.a) <= tol(o.a)
            || self.distance_to(o.b) <= tol(o.b)
    }
}

fn tol(p: Point2) -> f64 {
    BOUNDARY_EPS * p.x.abs().max(p.y.abs()).max(1.0)
}

/// Intersection of the infinite lines through `(p, p + r)` and `(q, q + s)`,
/// returned as the parameters `(t, u)` with `p + t r = q + u s`.
pub fn line_intersection(p: Point2, r: Point2, q: Point2, s: Point2) -> Option<(f64, f64)> {
    let denom = r.cross(s);
    let scale = r.norm() * s.norm();
    if scale == 0.0 || denom.abs() <= 1e-12 * scale {
        return None;
    }
    let qp = q - p;
    Some((qp.cross(s) / denom, qp.cross(r) / denom))
}

/// Shoelace signed area.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

pub fn polygon_centroid_of_vertices(poly: &[Point2]) -> Point2 {
    let n = poly.len().max(1) as f64;
    let s = poly.iter().fold(Point2::default(), |acc, p| acc + *p);
    s * (1.0 / n)
}

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let eps = tol(p);
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[j], poly[i]);
        if Segment::new(a, b).distance_to(p) <= eps {
            return true;
        }
        if (b.y > p.y) != (a.y > p.y) {
            let x_at = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
            if p.x < x_at {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Whether a polygon has no two non-adjacent edges that touch.
pub fn is_simple_polygon(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 || polygon_area(poly).abs() <= 1e-12 {
        return false;
    }
    for i in 0..n {
        let e1 = Segment::new(poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let e2 = Segment::new(poly[j], poly[(j + 1) % n]);
            if e1.intersects(&e2) {
                return false;
            }
        }
    }
    true
}

/// Platform corners in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corners {
    pub tl: Point2,
    pub tr: Point2,
    pub bl: Point2,
    pub br: Point2,
}

impl Corners {
    /// The corner quadrilateral in boundary order.
    pub fn polygon(&self) -> [Point2; 4] {
        [self.tl, self.tr, self.br, self.bl]
    }

    pub fn centroid(&self) -> Point2 {
        polygon_centroid_of_vertices(&self.polygon())
    }

    pub fn is_simple(&self) -> bool {
        self.polygon().iter().all(|p| p.is_finite()) && is_simple_polygon(&self.polygon())
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Corners {
        Corners { tl: f(self.tl), tr: f(self.tr), bl: f(self.bl), br: f(self.br) }
    }
}

/// Which side of an oriented boundary a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Platform,
    Boundary,
    Track,
}

/// A polyline separating the platform from the track side.
///
/// The first and last segments are extended to infinite rays, so the boundary
/// splits the plane in two. `reference` is a point known to be on the
/// platform side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub points: Vec<Point2>,
    pub reference: Point2,
}

impl Boundary {
    pub fn new(points: Vec<Point2>, reference: Point2) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::Degenerate("boundary needs at least two points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::Degenerate("non-finite boundary point".into()));
        }
        if points.first().unwrap().distance(*points.last().unwrap()) == 0.0
            || points.windows(2).any(|w| w[0] == w[1])
        {
            return Err(GeometryError::Degenerate("boundary has zero-length segment".into()));
        }
        let b = Boundary { points, reference };
        if b.distance_extended(reference) <= tol(reference) {
            return Err(GeometryError::Degenerate("reference point lies on the boundary".into()));
        }
        Ok(b)
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.points.windows(2).map(|w| Segment::new(w[0], w[1]))
    }

    /// Distance to the boundary including its end rays.
    fn distance_extended(&self, p: Point2) -> f64 {
        let n = self.points.len();
        let mut best = self.segments().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min);
        let rays = [
            (self.points[0], self.points[0] - self.points[1]),
            (self.points[n - 1], self.points[n - 1] - self.points[n - 2]),
        ];
        for (o, d) in rays {
            let t = ((p - o).dot(d) / d.dot(d)).max(0.0);
            best = best.min(p.distance(o + d * t));
        }
        best
    }

    pub fn side(&self, p: Point2) -> Side {
        if self.distance_extended(p) <= tol(p) {
            return Side::Boundary;
        }
        let r = p - self.reference;
        let n = self.points.len();
        let mut crossings = 0usize;
        // start ray, u in (0, inf)
        let d0 = self.points[0] - self.points[1];
        if let Some((t, u)) = line_intersection(self.reference, r, self.points[0], d0) {
            if (0.0..=1.0).contains(&t) && u > 0.0 {
                crossings += 1;
            }
        }
        for s in self.segments() {
            if let Some((t, u)) = line_intersection(self.reference, r, s.a, s.b - s.a) {
                if (0.0..=1.0).contains(&t) && (0.0..1.0).contains(&u) {
                    crossings += 1;
                }
            }
        }
        // end ray, u in [0, inf)
        let dn = self.points[n - 1] - self.points[n - 2];
        if let Some((t, u)) = line_intersection(self.reference, r, self.points[n - 1], dn) {
            if (0.0..=1.0).contains(&t) && u >= 0.0 {
                crossings += 1;
            }
        }
        if crossings % 2 == 1 {
            Side::Track
        } else {
            Side::Platform
        }
    }

    /// Strictly on the track side.
    pub fn is_track_side(&self, p: Point2) -> bool {
        self.side(p) == Side::Track
    }
}

/// True iff `p0 -> p1` properly crosses a boundary segment, or exactly one of
/// the endpoints lies strictly on the track side. Boundary points belong to
/// the platform side, matching [`ZonePartition::locate`].
pub fn segment_crosses(boundary: &Boundary, p0: Point2, p1: Point2) -> bool {
    if p0 == p1 {
        return false;
    }
    let seg = Segment::new(p0, p1);
    boundary.segments().any(|s| seg.properly_intersects(&s))
        || boundary.is_track_side(p0) != boundary.is_track_side(p1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ZoneMembership {
    pub in_a: bool,
    pub in_b: bool,
    pub in_c: bool,
    pub on_yellow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePartition {
    pub corners: Corners,
    pub zone_a: Vec<Point2>,
    pub zone_b: Vec<Point2>,
    pub zone_c: Vec<Point2>,
    pub l_left: Segment,
    pub l_right: Segment,
    /// Top edge `tl -> tr`.
    pub l_o: Segment,
    /// Top edge shifted inward by `offset_d`, unclipped.
    pub l_d: Segment,
    /// `l_d` clipped to the side edges, `q_l -> q_r`.
    pub s_d: Segment,
    pub yellow_boundary: Boundary,
}

impl ZonePartition {
    pub fn locate(&self, p: Point2) -> ZoneMembership {
        ZoneMembership {
            in_a: point_in_polygon(&self.zone_a, p),
            in_b: point_in_polygon(&self.zone_b, p),
            in_c: point_in_polygon(&self.zone_c, p),
            on_yellow: self.yellow_boundary.is_track_side(p),
        }
    }

    pub fn on_yellow(&self, p: Point2) -> bool {
        self.yellow_boundary.is_track_side(p)
    }
}

/// Zone codes sampled at pixel centers over the corners' bounding box:
/// 0 outside every zone, 85 zone A, 170 zone B, 255 zone C (C wins).
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRaster {
    pub width: usize,
    pub height: usize,
    pub origin: Point2,
    /// Image units per raster pixel.
    pub pixel: f64,
    pub codes: Vec<u8>,
}

pub fn rasterize_zones(z: &ZonePartition, max_side: usize) -> ZoneRaster {
    let poly = z.corners.polygon();
    let (mut lo, mut hi) = (poly[0], poly[0]);
    for p in &poly[1..] {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y);
    let pixel = span / max_side.max(1) as f64;
    let width = (((hi.x - lo.x) / pixel).ceil() as usize).max(1);
    let height = (((hi.y - lo.y) / pixel).ceil() as usize).max(1);
    let mut codes = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let p = Point2::new(lo.x + (c as f64 + 0.5) * pixel, lo.y + (r as f64 + 0.5) * pixel);
            let m = z.locate(p);
            codes.push(if m.in_c {
                255
            } else if m.in_b {
                170
            } else if m.in_a {
                85
            } else {
                0
            });
        }
    }
    ZoneRaster { width, height, origin: lo, pixel, codes }
}

/// Build the three zones from the scene calibration.
pub fn build_zone_partition(cfg: &SceneConfig) -> Result<ZonePartition, GeometryError> {
    let c = cfg.corners;
    if !c.is_simple() {
        return Err(GeometryError::Degenerate("corner quadrilateral is not simple".into()));
    }
    if !(cfg.offset_d > 0.0 && cfg.offset_d.is_finite()) {
        return Err(GeometryError::Degenerate(format!("offset_d must be > 0, got {}", cfg.offset_d)));
    }
    let top = c.tr - c.tl;
    let len = top.norm();
    if len == 0.0 {
        return Err(GeometryError::Degenerate("top edge has zero length".into()));
    }
    let mut normal = Point2::new(-top.y, top.x) * (1.0 / len);
    if normal.dot(c.centroid() - c.tl) < 0.0 {
        normal = -normal;
    }
    let shift = normal * cfg.offset_d;
    let l_d = Segment::new(c.tl + shift, c.tr + shift);

    let clip = |edge_a: Point2, edge_b: Point2, side: &'static str| -> Result<Point2, GeometryError> {
        let (_, t) = line_intersection(l_d.a, top, edge_a, edge_b - edge_a).ok_or_else(|| {
            GeometryError::Degenerate(format!("offset line is parallel to the {side} edge"))
        })?;
        if !(0.0..=1.0).contains(&t) {
            return Err(GeometryError::Clipping { offset_d: cfg.offset_d, side, t });
        }
        Ok(edge_a.lerp(edge_b, t))
    };
    let q_l = clip(c.tl, c.bl, "left")?;
    let q_r = clip(c.tr, c.br, "right")?;

    let tl_a = c.tl + (c.tr - c.tl) * cfg.alpha;
    let tr_a = c.tr + (c.tl - c.tr) * cfg.alpha;
    let bl_b = c.bl + (c.br - c.bl) * cfg.beta;
    let br_b = c.br + (c.bl - c.br) * cfg.beta;

    let yellow_points = match &cfg.yellow_boundary_override {
        Some(pts) => pts.clone(),
        None => vec![c.tr, c.br],
    };
    let yellow_boundary = Boundary::new(yellow_points, c.centroid())?;

    Ok(ZonePartition {
        corners: c,
        zone_a: vec![c.tl, tl_a, bl_b, c.bl],
        zone_b: vec![tr_a, c.tr, c.br, br_b],
        zone_c: vec![c.tl, c.tr, q_r, q_l],
        l_left: Segment::new(tl_a, bl_b),
        l_right: Segment::new(tr_a, br_b),
        l_o: Segment::new(c.tl, c.tr),
        l_d,
        s_d: Segment::new(q_l, q_r),
        yellow_boundary,
    })
}
