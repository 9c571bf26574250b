//! Image to platform-referenced homographies.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Corners, Point2};

const SINGULAR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("point ({0}, {1}) maps to infinity")]
    AtInfinity(f64, f64),
    #[error("singular homography (|det| = {0:e})")]
    Singular(f64),
    #[error("homography estimation needs at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate correspondence configuration: {0}")]
    Degenerate(String),
}

/// Projective map, stored with `m[2][2] = 1` whenever that entry is not ~0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, ProjectionError> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= SINGULAR_EPS || m.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::Singular(det));
        }
        let m = if m[(2, 2)].abs() > SINGULAR_EPS { m / m[(2, 2)] } else { m };
        Ok(Homography { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, ProjectionError> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography { m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0) }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, ProjectionError> {
        let m = &self.m;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < SINGULAR_EPS || !w.is_finite() {
            return Err(ProjectionError::AtInfinity(p.x, p.y));
        }
        Ok(Point2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        ))
    }

    pub fn invert(&self) -> Result<Homography, ProjectionError> {
        let inv = self.m.try_inverse().ok_or(ProjectionError::Singular(self.m.determinant()))?;
        Homography::from_matrix(inv)
    }

    pub fn compose(&self, then: &Homography) -> Result<Homography, ProjectionError> {
        Homography::from_matrix(then.m * self.m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub homography: Homography,
    /// Root-mean-square reprojection error in destination units.
    pub rms: f64,
}

/// Centers the points and scales them to mean distance sqrt(2).
fn normalizing_transform(pts: &[Point2]) -> Result<Matrix3<f64>, ProjectionError> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(ProjectionError::Degenerate("points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: Point2) -> Point2 {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

fn has_collinear_triple(pts: &[Point2]) -> bool {
    let scale = pts.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for k in (j + 1)..pts.len() {
                let area = crate::geometry::orient(pts[i], pts[j], pts[k]);
                if area.abs() <= 1e-12 * scale * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized direct linear transform from `(src, dst)` correspondences.
pub fn estimate(pairs: &[(Point2, Point2)]) -> Result<Estimate, ProjectionError> {
    let n = pairs.len();
    if n < 4 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    if src.iter().chain(&dst).any(|p| !p.is_finite()) {
        return Err(ProjectionError::Degenerate("non-finite coordinate".into()));
    }
    if n == 4 && (has_collinear_triple(&src) || has_collinear_triple(&dst)) {
        return Err(ProjectionError::Degenerate("three of four points are collinear".into()));
    }
    let ts = normalizing_transform(&src)?;
    let td = normalizing_transform(&dst)?;

    // Pad to at least 9 rows so the SVD yields a full right basis.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = transform(&ts, *s);
        let d = transform(&td, *d);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -s.x;
        a[(r0, 1)] = -s.y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = d.x * s.x;
        a[(r0, 7)] = d.x * s.y;
        a[(r0, 8)] = d.x;
        a[(r1, 3)] = -s.x;
        a[(r1, 4)] = -s.y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = d.y * s.x;
        a[(r1, 7)] = d.y * s.y;
        a[(r1, 8)] = d.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| ProjectionError::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv = &svd.singular_values;
    let largest = sv[order[order.len() - 1]];
    if sv[order[1]] <= 1e-10 * largest {
        return Err(ProjectionError::Degenerate("rank-deficient system".into()));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or_else(|| ProjectionError::Degenerate("normalization".into()))?;
    let homography = Homography::from_matrix(td_inv * hn * ts)?;

    let mut sq = 0.0;
    for (s, d) in src.iter().zip(&dst) {
        let p = homography.apply(*s)?;
        sq += (p - *d).dot(p - *d);
    }
    Ok(Estimate { homography, rms: (sq / n as f64).sqrt() })
}

/// Image-space distance from the top corner edge that corresponds to
/// `meters` of platform depth, measured at the middle of the top edge.
pub fn image_offset_for_depth(
    to_platform: &Homography,
    corners: &Corners,
    meters: f64,
) -> Result<f64, ProjectionError> {
    let tl = to_platform.apply(corners.tl)?;
    let tr = to_platform.apply(corners.tr)?;
    let centroid = {
        let c = corners.map(|p| to_platform.apply(p).unwrap_or(p));
        c.centroid()
    };
    let edge = tr - tl;
    let mut normal = Point2::new(-edge.y, edge.x) * (1.0 / edge.norm());
    if normal.dot(centroid - tl) < 0.0 {
        normal = -normal;
    }
    let inner = tl.midpoint(tr) + normal * meters;
    let back = to_platform.invert()?.apply(inner)?;
    let img_edge = corners.tr - corners.tl;
    Ok((back - corners.tl).cross(img_edge).abs() / img_edge.norm())
}
