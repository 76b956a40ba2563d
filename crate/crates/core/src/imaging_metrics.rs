//! Figures of merit for power maps: dB normalization, peak location, dynamic
//! range, -3 dB mainlobe width and the strongest sidelobe.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::beamformers::PowerMap;
use crate::error::{invalid, Error, Result};
use crate::geometry::{ImagingGrid, Position};

/// Display floor for normalized maps.
pub const DEFAULT_FLOOR_DB: f64 = -100.0;

/// Level that bounds the mainlobe, relative to the peak.
pub const MAINLOBE_LEVEL_DB: f64 = -3.0;

/// Per-point `max(10 log10(v / max), floor_db)`. Exact zeros map to the
/// floor and the peak maps to exactly 0 dB.
///
/// ```
/// use csbeam::beamformers::{Algorithm, PowerMap};
/// use csbeam::imaging_metrics::normalize_db;
///
/// let map = PowerMap::new(vec![1.0, 0.1, 0.0], 5000.0, Algorithm::Cb).unwrap();
/// assert_eq!(normalize_db(&map, -100.0).unwrap(), vec![0.0, -10.0, -100.0]);
/// ```
pub fn normalize_db(map: &PowerMap, floor_db: f64) -> Result<Vec<f64>> {
    normalize_values(map.values(), floor_db)
}

fn normalize_values(values: &[f64], floor_db: f64) -> Result<Vec<f64>> {
    if !(floor_db < 0.0 && floor_db.is_finite()) {
        return Err(invalid(format!("floor must be a negative dB level, got {floor_db}")));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::AllZeroMap);
    }
    Ok(values
        .iter()
        .map(|&v| {
            if v == max {
                0.0
            } else if v == 0.0 {
                floor_db
            } else {
                (10.0 * (v / max).log10()).max(floor_db)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub peak_index: usize,
    /// Meters.
    pub peak_position: [f64; 3],
    /// Linear peak value in map units.
    pub peak_value: f64,
    /// Peak minus the smallest normalized level, floor included (so at most
    /// `-floor_db`).
    pub dynamic_range_db: f64,
    /// Smallest normalized level among nonzero cells (floor-clamped), or
    /// 0 when only the peak is nonzero.
    pub min_nonzero_db: f64,
    /// Cells that are exactly zero.
    pub zero_count: usize,
    /// Full -3 dB width along x through the peak, at least one grid spacing.
    pub mainlobe_width_m: f64,
    /// Size of the 4-connected -3 dB region around the peak.
    pub mainlobe_cells: usize,
    /// Strongest level outside the mainlobe region, or the floor when there
    /// is nothing outside it.
    pub max_sidelobe_db: f64,
    pub localization_error_m: Option<f64>,
    /// Chebyshev distance in cells from the peak to the cell nearest the truth.
    pub localization_error_cells: Option<usize>,
    /// The peak lies on the grid edge.
    pub peak_on_boundary: bool,
    /// The -3 dB row crossing hit the grid edge, so the width is a lower bound.
    pub width_truncated: bool,
}

/// Metrics of `map` on `grid` with the default floor.
pub fn compute_metrics(map: &PowerMap, grid: &ImagingGrid, truth: Option<Position>) -> Result<MapMetrics> {
    compute_metrics_with_floor(map, grid, truth, DEFAULT_FLOOR_DB)
}

pub fn compute_metrics_with_floor(map: &PowerMap, grid: &ImagingGrid, truth: Option<Position>, floor_db: f64) -> Result<MapMetrics> {
    if map.len() != grid.len() {
        return Err(invalid(format!("map has {} values but the grid has {} points", map.len(), grid.len())));
    }
    let db = normalize_db(map, floor_db)?;
    let peak = map.argmax();
    let peak_position = grid.point(peak);

    let dynamic_range_db = -db.iter().copied().fold(0.0, f64::min);
    let zero_count = map.values().iter().filter(|&&v| v == 0.0).count();
    let min_nonzero_db = map
        .values()
        .iter()
        .zip(&db)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, &d)| d)
        .fold(0.0, f64::min);

    let region = mainlobe_region(&db, grid, peak);
    let mainlobe_cells = region.iter().filter(|&&inside| inside).count();
    let max_sidelobe_db = db
        .iter()
        .zip(&region)
        .filter(|(_, inside)| !**inside)
        .map(|(&d, _)| d)
        .fold(floor_db, f64::max);

    let (mainlobe_width_m, width_truncated) = row_width(&db, grid, peak);
    let (row, col) = grid.row_col(peak);
    let peak_on_boundary = row == 0 || col == 0 || row + 1 == grid.ny() || col + 1 == grid.nx();

    Ok(MapMetrics {
        peak_index: peak,
        peak_position: [peak_position.x, peak_position.y, peak_position.z],
        peak_value: map.max(),
        dynamic_range_db,
        min_nonzero_db,
        zero_count,
        mainlobe_width_m,
        mainlobe_cells,
        max_sidelobe_db,
        localization_error_m: truth.map(|t| (peak_position - t).norm()),
        localization_error_cells: truth.map(|t| grid.cell_distance(peak, grid.nearest(&t))),
        peak_on_boundary,
        width_truncated,
    })
}

/// Cells of the mainlobe: the 4-connected region at or above -3 dB that
/// contains the peak.
pub fn mainlobe_mask(map: &PowerMap, grid: &ImagingGrid) -> Result<Vec<bool>> {
    if map.len() != grid.len() {
        return Err(invalid(format!("map has {} values but the grid has {} points", map.len(), grid.len())));
    }
    let db = normalize_db(map, DEFAULT_FLOOR_DB)?;
    Ok(mainlobe_region(&db, grid, map.argmax()))
}

fn mainlobe_region(db: &[f64], grid: &ImagingGrid, peak: usize) -> Vec<bool> {
    let mut inside = vec![false; db.len()];
    let mut queue = VecDeque::from([peak]);
    inside[peak] = true;
    while let Some(k) = queue.pop_front() {
        let (r, c) = grid.row_col(k);
        let mut neighbours = Vec::with_capacity(4);
        if r > 0 {
            neighbours.push(grid.index(r - 1, c));
        }
        if r + 1 < grid.ny() {
            neighbours.push(grid.index(r + 1, c));
        }
        if c > 0 {
            neighbours.push(grid.index(r, c - 1));
        }
        if c + 1 < grid.nx() {
            neighbours.push(grid.index(r, c + 1));
        }
        for n in neighbours {
            if !inside[n] && db[n] >= MAINLOBE_LEVEL_DB {
                inside[n] = true;
                queue.push_back(n);
            }
        }
    }
    inside
}

/// -3 dB width along the peak row with linearly interpolated crossings.
fn row_width(db: &[f64], grid: &ImagingGrid, peak: usize) -> (f64, bool) {
    let (row, col) = grid.row_col(peak);
    let spacing = grid.spacing_x();
    let level = |c: usize| db[grid.index(row, c)];
    let x = |c: usize| grid.point(grid.index(row, c)).x;
    let mut truncated = false;

    let mut left = col;
    while left > 0 && level(left - 1) >= MAINLOBE_LEVEL_DB {
        left -= 1;
    }
    let x_left = if left == 0 {
        truncated = true;
        x(0)
    } else {
        crossing(x(left - 1), level(left - 1), x(left), level(left))
    };

    let mut right = col;
    while right + 1 < grid.nx() && level(right + 1) >= MAINLOBE_LEVEL_DB {
        right += 1;
    }
    let x_right = if right + 1 == grid.nx() {
        truncated = true;
        x(grid.nx() - 1)
    } else {
        crossing(x(right + 1), level(right + 1), x(right), level(right))
    };
    ((x_right - x_left).max(spacing), truncated)
}

/// Position where the line through `(x_out, d_out)` and `(x_in, d_in)` meets
/// -3 dB; `d_out < -3 <= d_in`.
fn crossing(x_out: f64, d_out: f64, x_in: f64, d_in: f64) -> f64 {
    let t = (MAINLOBE_LEVEL_DB - d_out) / (d_in - d_out);
    x_out + t * (x_in - x_out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Which grid line a slice follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceThrough {
    Peak,
    /// Linear grid index of a point on the line.
    Index(usize),
}

/// Normalized levels along one grid line as `(coordinate, dB)` pairs,
/// ordered by coordinate.
///
/// ```
/// use csbeam::beamformers::{Algorithm, PowerMap};
/// use csbeam::geometry::{make_grid, Extent};
/// use csbeam::imaging_metrics::{axial_slice, Axis, SliceThrough};
///
/// let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 3, 3, 1.0).unwrap();
/// let mut values = vec![0.1; 9];
/// values[4] = 1.0;
/// let map = PowerMap::new(values, 5000.0, Algorithm::Cb).unwrap();
/// let slice = axial_slice(&map, &grid, Axis::X, SliceThrough::Peak, -100.0).unwrap();
/// assert_eq!(slice, vec![(-1.0, -10.0), (0.0, 0.0), (1.0, -10.0)]);
/// ```
pub fn axial_slice(map: &PowerMap, grid: &ImagingGrid, axis: Axis, through: SliceThrough, floor_db: f64) -> Result<Vec<(f64, f64)>> {
    if map.len() != grid.len() {
        return Err(invalid(format!("map has {} values but the grid has {} points", map.len(), grid.len())));
    }
    let anchor = match through {
        SliceThrough::Peak => map.argmax(),
        SliceThrough::Index(index) if index < grid.len() => index,
        SliceThrough::Index(index) => {
            return Err(Error::IndexOutOfRange {
                index,
                len: grid.len(),
            })
        }
    };
    let db = normalize_db(map, floor_db)?;
    let (row, col) = grid.row_col(anchor);
    let line: Vec<usize> = match axis {
        Axis::X => (0..grid.nx()).map(|c| grid.index(row, c)).collect(),
        Axis::Y => (0..grid.ny()).map(|r| grid.index(r, col)).collect(),
    };
    Ok(line
        .into_iter()
        .map(|k| {
            let p = grid.point(k);
            (if axis == Axis::X { p.x } else { p.y }, db[k])
        })
        .collect())
}
