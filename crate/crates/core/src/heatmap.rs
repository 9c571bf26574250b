//! Trajectory density maps on a platform-referenced grid.
//!
//! Individual maps drop one unit of heat per trajectory point into the
//! containing cell and are then blurred with a truncated Gaussian. The
//! position risk map is the cellwise mean of the at-risk individuals' blurred
//! maps, scaled so its maximum is 1.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("smoothing sigma must be > 0, got {0}")]
    Sigma(f64),
    #[error("cannot aggregate an empty set of maps")]
    EmptyAggregate,
    #[error("grid shapes differ: {0}")]
    Shape(String),
    #[error("grid csv: {0}")]
    Csv(String),
}

pub const DEFAULT_SIGMA_M: f64 = 0.5;
pub const DEFAULT_CELL_M: f64 = 0.1;

/// Grid extent (meters, inclusive) and square cell size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub cell: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        let v = [self.min_x, self.min_y, self.max_x, self.max_y, self.cell];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(HeatmapError::Grid("non-finite extent".into()));
        }
        if self.cell <= 0.0 {
            return Err(HeatmapError::Grid(format!("cell size must be > 0, got {}", self.cell)));
        }
        if self.max_x <= self.min_x || self.max_y <= self.min_y {
            return Err(HeatmapError::Grid("empty extent".into()));
        }
        if self.dims().0 * self.dims().1 > 50_000_000 {
            return Err(HeatmapError::Grid("grid too large".into()));
        }
        Ok(())
    }

    /// `(nx, ny)` = ceil(extent / cell) per axis.
    pub fn dims(&self) -> (usize, usize) {
        let n = |span: f64| ((span / self.cell) - 1e-9).ceil().max(1.0) as usize;
        (n(self.max_x - self.min_x), n(self.max_y - self.min_y))
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let (nx, ny) = self.dims();
        let ix = (((p.x - self.min_x) / self.cell).floor() as usize).min(nx - 1);
        let iy = (((p.y - self.min_y) / self.cell).floor() as usize).min(ny - 1);
        Some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.min_x + (ix as f64 + 0.5) * self.cell,
            self.min_y + (iy as f64 + 0.5) * self.cell,
        )
    }
}

/// Dense row-major grid (`values[iy * nx + ix]`).
///
/// `sources` tags which trajectories contributed, so callers can check that a
/// risk map was built only from the data it is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub spec: GridSpec,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub sources: Vec<String>,
}

impl HeatmapGrid {
    pub fn zeros(spec: GridSpec) -> HeatmapGrid {
        let (nx, ny) = spec.dims();
        HeatmapGrid { spec, nx, ny, values: vec![0.0; nx * ny], sources: Vec::new() }
    }

    pub fn with_source(mut self, tag: impl Into<String>) -> Self {
        self.sources.push(tag.into());
        self
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn same_shape(&self, o: &HeatmapGrid) -> bool {
        self.spec == o.spec && self.nx == o.nx && self.ny == o.ny
    }

    /// Bilinear sample between cell centers, clamped at the outer half cell.
    /// `None` outside the extent.
    pub fn sample(&self, p: Point2) -> Option<f64> {
        if !self.spec.contains(p) {
            return None;
        }
        let axis = |v: f64, min: f64, n: usize| {
            let u = ((v - min) / self.spec.cell - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, u - i0 as f64)
        };
        let (x0, x1, fx) = axis(p.x, self.spec.min_x, self.nx);
        let (y0, y1, fy) = axis(p.y, self.spec.min_y, self.ny);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    /// Plain-text cache: a metadata row, then `ny` rows of `nx` values.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let s = &self.spec;
        let meta = [s.min_x, s.min_y, s.max_x, s.max_y, s.cell].map(|v| v.to_string());
        wtr.write_record(meta.iter().chain([self.nx.to_string(), self.ny.to_string()].iter()))
            .expect("in-memory write");
        for row in self.values.chunks(self.nx) {
            wtr.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<HeatmapGrid, HeatmapError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = rdr.records();
        let bad = |m: &str| HeatmapError::Csv(m.to_string());
        let meta = rows.next().ok_or_else(|| bad("empty file"))?.map_err(|e| HeatmapError::Csv(e.to_string()))?;
        if meta.len() != 7 {
            return Err(bad("metadata row needs 7 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| HeatmapError::Csv(format!("bad number {s:?}")));
        let spec = GridSpec {
            min_x: num(&meta[0])?,
            min_y: num(&meta[1])?,
            max_x: num(&meta[2])?,
            max_y: num(&meta[3])?,
            cell: num(&meta[4])?,
        };
        spec.validate()?;
        let mut grid = HeatmapGrid::zeros(spec);
        if num(&meta[5])? as usize != grid.nx || num(&meta[6])? as usize != grid.ny {
            return Err(bad("dimensions disagree with extent"));
        }
        let mut values = Vec::with_capacity(grid.nx * grid.ny);
        for row in rows {
            let row = row.map_err(|e| HeatmapError::Csv(e.to_string()))?;
            if row.len() != grid.nx {
                return Err(bad("row length mismatch"));
            }
            for v in row.iter() {
                let v = num(v)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad("negative or non-finite cell"));
                }
                values.push(v);
            }
        }
        if values.len() != grid.values.len() {
            return Err(bad("row count mismatch"));
        }
        grid.values = values;
        Ok(grid)
    }

    /// 16-bit binary PGM (big-endian samples), scaled so the maximum cell
    /// is 65535. Row 0 is `min_y`.
    pub fn write_pgm16(&self, out: &mut impl Write) -> std::io::Result<()> {
        let max = self.max();
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        write!(out, "P5\n{} {}\n65535\n", self.nx, self.ny)?;
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| ((v * scale).round() as u16).to_be_bytes()).collect();
        out.write_all(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accumulation {
    pub grid: HeatmapGrid,
    pub out_of_extent: usize,
}

/// One unit of heat per in-extent point.
pub fn accumulate(points: &[Point2], spec: GridSpec) -> Accumulation {
    let mut grid = HeatmapGrid::zeros(spec);
    let mut out_of_extent = 0;
    for &p in points {
        match spec.cell_of(p) {
            Some((ix, iy)) => grid.values[iy * grid.nx + ix] += 1.0,
            None => out_of_extent += 1,
        }
    }
    Accumulation { grid, out_of_extent }
}

/// Discrete 1D Gaussian weights for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_weights(sigma_cells: f64) -> Vec<f64> {
    let r = (3.0 * sigma_cells).ceil() as i64;
    (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma_cells * sigma_cells)).exp()).collect()
}

/// Scatter each cell along one axis with weights renormalized to the cells
/// that exist, so no heat leaves the grid.
fn scatter_axis(values: &[f64], n_along: usize, n_across: usize, along_x: bool, w: &[f64]) -> Vec<f64> {
    let r = (w.len() / 2) as i64;
    let norms: Vec<f64> = (0..n_along as i64)
        .map(|i| {
            let lo = (i - r).max(0);
            let hi = (i + r).min(n_along as i64 - 1);
            (lo..=hi).map(|j| w[(j - i + r) as usize]).sum()
        })
        .collect();
    let idx = |along: usize, across: usize| {
        if along_x {
            across * n_along + along
        } else {
            along * n_across + across
        }
    };
    let mut out = vec![0.0; values.len()];
    for across in 0..n_across {
        for i in 0..n_along {
            let v = values[idx(i, across)];
            if v == 0.0 {
                continue;
            }
            let lo = (i as i64 - r).max(0);
            let hi = (i as i64 + r).min(n_along as i64 - 1);
            let scale = v / norms[i];
            for j in lo..=hi {
                out[idx(j as usize, across)] += scale * w[(j - i as i64 + r) as usize];
            }
        }
    }
    out
}

/// Separable truncated-Gaussian blur (sigma in meters) that conserves mass.
pub fn smooth(grid: &HeatmapGrid, sigma: f64) -> Result<HeatmapGrid, HeatmapError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(HeatmapError::Sigma(sigma));
    }
    let w = gaussian_weights(sigma / grid.spec.cell);
    let xs = scatter_axis(&grid.values, grid.nx, grid.ny, true, &w);
    let values = scatter_axis(&xs, grid.ny, grid.nx, false, &w);
    Ok(HeatmapGrid { values, ..grid.clone() })
}

/// Cellwise mean. Each cell sums its inputs in sorted order, so the result
/// does not depend on input order.
pub fn aggregate(maps: &[&HeatmapGrid]) -> Result<HeatmapGrid, HeatmapError> {
    let first = maps.first().ok_or(HeatmapError::EmptyAggregate)?;
    for m in &maps[1..] {
        if !first.same_shape(m) {
            return Err(HeatmapError::Shape(format!(
                "{}x{} {:?} vs {}x{} {:?}",
                first.nx, first.ny, first.spec, m.nx, m.ny, m.spec
            )));
        }
    }
    let k = maps.len() as f64;
    let mut buf = vec![0.0; maps.len()];
    let mut values = Vec::with_capacity(first.values.len());
    for c in 0..first.values.len() {
        for (b, m) in buf.iter_mut().zip(maps) {
            *b = m.values[c];
        }
        buf.sort_by(f64::total_cmp);
        values.push(buf.iter().sum::<f64>() / k);
    }
    let mut sources: Vec<String> = maps.iter().flat_map(|m| m.sources.iter().cloned()).collect();
    sources.sort();
    sources.dedup();
    Ok(HeatmapGrid { spec: first.spec, nx: first.nx, ny: first.ny, values, sources })
}

/// Divide by the maximum; an all-zero grid is returned unchanged.
pub fn normalize(grid: &HeatmapGrid) -> HeatmapGrid {
    let max = grid.max();
    let mut out = grid.clone();
    if max > 0.0 {
        for v in &mut out.values {
            *v /= max;
        }
    }
    out
}

/// Mean bilinear sample of `risk_map` over the in-extent points; 0 when there
/// are none.
pub fn position_risk(risk_map: &HeatmapGrid, points: &[Point2]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &p in points {
        if let Some(v) = risk_map.sample(p) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).clamp(0.0, 1.0)
    }
}

/// Sidecar metadata written next to rendered grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSidecar {
    pub extent: [f64; 4],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub mass: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_extent: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl GridSidecar {
    pub fn of(grid: &HeatmapGrid, out_of_extent: Option<usize>) -> GridSidecar {
        let s = grid.spec;
        GridSidecar {
            extent: [s.min_x, s.min_y, s.max_x, s.max_y],
            cell: s.cell,
            nx: grid.nx,
            ny: grid.ny,
            mass: grid.mass(),
            max: grid.max(),
            out_of_extent,
            sources: grid.sources.clone(),
        }
    }
}
