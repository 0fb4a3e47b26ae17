//! Single versus multiple illuminant decision from a map of local estimates.
//!
//! Estimates are projected to `(R/G, B/G)`, a Gaussian KDE is evaluated on a
//! regular grid, modes are found by scale-space tracking, weak modes are
//! dropped, and the scene counts as multi-illuminant when the retained
//! modes disagree by more than an angular threshold.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{EstimateMap, LinearImage};
use crate::metrics::angular_error;
use crate::scalar::Real;

/// Green values below this are not projected.
pub const GREEN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaticityPoint {
    /// R/G
    pub r: f64,
    /// B/G
    pub b: f64,
}

impl ChromaticityPoint {
    /// The RGB direction `(r, 1, b)`.
    pub fn rgb(&self) -> [f64; 3] {
        [self.r, 1.0, self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<ChromaticityPoint>,
    /// Valid estimates skipped because their green channel was too small.
    pub dropped: usize,
}

pub fn project_chromaticity<T: Real>(map: &EstimateMap<T>) -> Result<Projection> {
    if map.valid_count() == 0 {
        return Err(Error::Empty("no valid estimates in the map"));
    }
    let mut points = Vec::with_capacity(map.valid_count());
    let mut dropped = 0;
    for est in map.valid() {
        let [r, g, b] = est.rgb().map(|v| v.as_f64());
        if g < GREEN_EPSILON {
            dropped += 1;
        } else {
            points.push(ChromaticityPoint { r: r / g, b: b / g });
        }
    }
    Ok(Projection { points, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Modes below `t` times the peak density are discarded.
    pub t: f64,
    pub angle_threshold_deg: f64,
    /// Grid cells per axis.
    pub resolution: usize,
    /// Number of blurred copies used to track persistent maxima; the
    /// blur widths are 1, 2, 4, ... cells.
    pub scale_levels: usize,
    /// Multiplier on the rule-of-thumb bandwidth.
    pub bandwidth_scale: f64,
    /// Absolute lower bound on the bandwidth in chromaticity units.
    pub min_bandwidth: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            t: 0.25,
            angle_threshold_deg: 3.0,
            resolution: 256,
            scale_levels: 3,
            bandwidth_scale: 1.0,
            min_bandwidth: 1e-3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::InvalidParameter(format!("mode retention ratio must lie in (0, 1], got {}", self.t)));
        }
        if !(self.angle_threshold_deg >= 0.0) {
            return Err(Error::InvalidParameter("angle threshold must be nonnegative".into()));
        }
        if self.resolution < 16 {
            return Err(Error::InvalidParameter(format!("grid resolution must be >= 16, got {}", self.resolution)));
        }
        if !(self.min_bandwidth > 0.0) || !(self.bandwidth_scale > 0.0) {
            return Err(Error::InvalidParameter("bandwidth scale and minimum bandwidth must be positive".into()));
        }
        Ok(())
    }
}

/// Density sampled at cell centers, row-major with `r` along rows and `b`
/// down columns: `values[j * resolution + i]` sits at
/// `(r_min + (i + 0.5) dr, b_min + (j + 0.5) db)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub resolution: usize,
    /// `(r_min, r_max, b_min, b_max)`
    pub bounds: (f64, f64, f64, f64),
    pub values: Vec<f64>,
    /// `(h_r, h_b)`
    pub bandwidth: (f64, f64),
}

impl DensityGrid {
    pub fn cell_size(&self) -> (f64, f64) {
        let (r0, r1, b0, b1) = self.bounds;
        let n = self.resolution as f64;
        ((r1 - r0) / n, (b1 - b0) / n)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> ChromaticityPoint {
        let (dr, db) = self.cell_size();
        ChromaticityPoint {
            r: self.bounds.0 + (i as f64 + 0.5) * dr,
            b: self.bounds.2 + (j as f64 + 0.5) * db,
        }
    }

    /// Cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: &ChromaticityPoint) -> (usize, usize) {
        let (dr, db) = self.cell_size();
        let last = self.resolution as f64 - 1.0;
        let i = ((p.r - self.bounds.0) / dr).floor().clamp(0.0, last);
        let j = ((p.b - self.bounds.2) / db).floor().clamp(0.0, last);
        (i as usize, j as usize)
    }

    /// Riemann sum of the density.
    pub fn integral(&self) -> f64 {
        let (dr, db) = self.cell_size();
        self.values.iter().sum::<f64>() * dr * db
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Writes the grid as a grey PFM, first row at `b_min`.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let img = LinearImage::from_fn(self.resolution, self.resolution, |x, y| [self.values[y * self.resolution + x]; 3])?;
        crate::io::write_pfm(path, &img)
    }
}

fn silverman(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.06 * var.sqrt() * (n as f64).powf(-0.2)
}

/// Gaussian product-kernel density over the padded data bounds. Each axis
/// uses Silverman's bandwidth times `cfg.bandwidth_scale`, floored at two grid cells and at
/// `cfg.min_bandwidth`.
pub fn kde_2d(points: &[ChromaticityPoint], cfg: &DetectorConfig) -> Result<DensityGrid> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::Empty("no chromaticity points"));
    }
    if points.iter().any(|p| !p.r.is_finite() || !p.b.is_finite()) {
        return Err(Error::InvalidData("non-finite chromaticity".into()));
    }
    let n = points.len();
    let res = cfg.resolution;
    let axis = |get: fn(&ChromaticityPoint) -> f64| {
        let it = points.iter().map(get);
        let lo = it.clone().fold(f64::INFINITY, f64::min);
        let hi = it.clone().fold(f64::NEG_INFINITY, f64::max);
        // Two cells of the padded range: h >= 2 (D + 6h) / res.
        let cell_floor = 2.0 * (hi - lo) / (res as f64 - 12.0);
        let h = (cfg.bandwidth_scale * silverman(it, n)).max(cell_floor).max(cfg.min_bandwidth);
        (lo - 3.0 * h, hi + 3.0 * h, h)
    };
    let (r0, r1, hr) = axis(|p| p.r);
    let (b0, b1, hb) = axis(|p| p.b);
    let mut grid = DensityGrid {
        resolution: res,
        bounds: (r0, r1, b0, b1),
        values: vec![0.0; res * res],
        bandwidth: (hr, hb),
    };
    let (dr, db) = grid.cell_size();
    let kernel = |d: f64, h: f64| (-0.5 * (d / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
    // The product kernel separates, so each point contributes an outer product.
    let kr: Vec<Vec<f64>> = points
        .iter()
        .map(|p| (0..res).map(|i| kernel(r0 + (i as f64 + 0.5) * dr - p.r, hr)).collect())
        .collect();
    let kb: Vec<Vec<f64>> = points
        .iter()
        .map(|p| (0..res).map(|j| kernel(b0 + (j as f64 + 0.5) * db - p.b, hb)).collect())
        .collect();
    let inv_n = 1.0 / n as f64;
    for (row_r, row_b) in kr.iter().zip(&kb) {
        for (j, &wb) in row_b.iter().enumerate() {
            if wb < 1e-300 {
                continue;
            }
            let w = wb * inv_n;
            for (v, &wr) in grid.values[j * res..(j + 1) * res].iter_mut().zip(row_r) {
                *v += w * wr;
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub point: ChromaticityPoint,
    pub density: f64,
    /// Grid cell `(i, j)`.
    pub cell: (usize, usize),
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn neighbors(i: usize, j: usize, res: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBORS.iter().filter_map(move |&(di, dj)| {
        let (x, y) = (i as isize + di, j as isize + dj);
        (x >= 0 && y >= 0 && (x as usize) < res && (y as usize) < res).then_some((x as usize, y as usize))
    })
}

/// Strictly above the neighbors that precede it in row-major order and at
/// least equal to the rest, so a plateau yields exactly one maximum.
fn is_local_max(v: &[f64], res: usize, i: usize, j: usize) -> bool {
    let c = v[j * res + i];
    neighbors(i, j, res).all(|(x, y)| {
        let n = v[y * res + x];
        if (y, x) < (j, i) {
            c > n
        } else {
            c >= n
        }
    })
}

/// Steepest ascent over the 8-neighborhood; ties go to the first neighbor
/// in row-major order.
fn climb(v: &[f64], res: usize, mut i: usize, mut j: usize) -> (usize, usize) {
    loop {
        let mut best = (i, j);
        let mut best_v = v[j * res + i];
        for (x, y) in neighbors(i, j, res) {
            if v[y * res + x] > best_v {
                best_v = v[y * res + x];
                best = (x, y);
            }
        }
        if best == (i, j) {
            return best;
        }
        (i, j) = best;
    }
}

/// Maxima of the most blurred grid, followed back through each finer
/// level to the raw density, then filtered to those at or above `t` times
/// the peak density. Sorted by density, highest first.
pub fn find_modes(grid: &DensityGrid, cfg: &DetectorConfig) -> Result<Vec<Mode>> {
    cfg.validate()?;
    let res = grid.resolution;
    if grid.values.len() != res * res {
        return Err(Error::InvalidData("density grid size does not match its resolution".into()));
    }
    let mut levels = vec![grid.values.clone()];
    for l in 0..cfg.scale_levels {
        levels.push(gaussian_blur(&grid.values, res, res, (1u64 << l) as f64));
    }
    let coarsest = levels.last().expect("at least the raw grid");
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for j in 0..res {
        for i in 0..res {
            if !is_local_max(coarsest, res, i, j) {
                continue;
            }
            let mut at = (i, j);
            for level in levels.iter().rev().skip(1) {
                at = climb(level, res, at.0, at.1);
            }
            if !cells.contains(&at) {
                cells.push(at);
            }
        }
    }
    let peak = grid.max();
    let mut modes: Vec<Mode> = cells
        .into_iter()
        .map(|(i, j)| Mode {
            point: grid.cell_center(i, j),
            density: grid.values[j * res + i],
            cell: (i, j),
        })
        .filter(|m| m.density >= cfg.t * peak)
        .collect();
    modes.sort_by(|a, b| b.density.total_cmp(&a.density).then((a.cell.1, a.cell.0).cmp(&(b.cell.1, b.cell.0))));
    Ok(modes)
}

/// Largest angle in degrees between the `(r, 1, b)` directions of any two
/// points; zero for fewer than two.
pub fn max_pairwise_angle(points: &[ChromaticityPoint]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (a, p) in points.iter().enumerate() {
        for q in &points[a + 1..] {
            worst = worst.max(angular_error(&p.rgb(), &q.rgb())?);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub decision: Decision,
    pub modes: Vec<Mode>,
    pub max_angle_deg: f64,
    pub dropped: usize,
    #[serde(skip)]
    pub grid: Option<DensityGrid>,
}

pub fn decide(modes: &[Mode], threshold_deg: f64) -> Result<(Decision, f64)> {
    let points: Vec<ChromaticityPoint> = modes.iter().map(|m| m.point).collect();
    let angle = max_pairwise_angle(&points)?;
    let decision = if angle > threshold_deg {
        Decision::Multiple
    } else {
        Decision::Single
    };
    Ok((decision, angle))
}

pub fn detect_multiple<T: Real>(map: &EstimateMap<T>, cfg: &DetectorConfig) -> Result<Detection> {
    let proj = project_chromaticity(map)?;
    if proj.points.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} valid estimates have a green channel below {GREEN_EPSILON}",
            proj.dropped
        )));
    }
    let grid = kde_2d(&proj.points, cfg)?;
    let modes = find_modes(&grid, cfg)?;
    let (decision, max_angle_deg) = decide(&modes, cfg.angle_threshold_deg)?;
    Ok(Detection {
        decision,
        modes,
        max_angle_deg,
        dropped: proj.dropped,
        grid: Some(grid),
    })
}
