//! Sensor layouts and the planar imaging grid.
//!
//! Coordinates are Cartesian meters. Arrays lie in the `z = 0` plane with
//! their center at the origin; the imaging grid is a lattice parallel to the
//! array at `z = plane_offset`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub type Position = Vector3<f64>;

/// An ordered set of sensor positions. Sensor `i` is row `i` of every
/// steering matrix and channel `i` of every time series built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    sensors: Vec<Position>,
    /// Index of each sensor in the array it was drawn from (identity for
    /// freshly built arrays).
    parent_indices: Vec<usize>,
}

impl ArrayGeometry {
    /// Builds an array, rejecting empty lists, non-finite coordinates and
    /// coincident sensors.
    pub fn new(sensors: Vec<Position>) -> Result<Self> {
        let parent_indices = (0..sensors.len()).collect();
        Self::with_parent_indices(sensors, parent_indices)
    }

    fn with_parent_indices(sensors: Vec<Position>, parent_indices: Vec<usize>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(invalid("an array needs at least one sensor"));
        }
        if let Some(i) = sensors.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("sensor {i} has a non-finite coordinate")));
        }
        for i in 0..sensors.len() {
            for l in i + 1..sensors.len() {
                if (sensors[i] - sensors[l]).norm() <= 0.0 {
                    return Err(invalid(format!("sensors {i} and {l} coincide")));
                }
            }
        }
        Ok(Self {
            sensors,
            parent_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[Position] {
        &self.sensors
    }

    pub fn sensor(&self, index: usize) -> Position {
        self.sensors[index]
    }

    pub fn parent_indices(&self) -> &[usize] {
        &self.parent_indices
    }

    /// Largest distance between any two sensors.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.sensors.iter().enumerate() {
            for b in &self.sensors[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }
}

/// Multi-arm logarithmic spiral in the `z = 0` plane.
///
/// Each arm follows `r(t) = r0 * exp(b t)` for `t` in `[0, PI]` with
/// `r0 = max_radius / 10` and `b` chosen so the outermost sensor lands on
/// `max_radius`; the polar angle of a point is `t` plus the arm rotation
/// `2 PI k / num_arms`. Sensors are spread over the arms as evenly as
/// possible (the first `num_sensors % num_arms` arms get one extra), equally
/// spaced in `t`. An arm holding a single sensor places it at `max_radius`.
pub fn spiral_array(num_sensors: usize, num_arms: usize, max_radius: f64) -> Result<ArrayGeometry> {
    if num_arms == 0 || num_sensors < num_arms {
        return Err(invalid(format!(
            "need num_sensors >= num_arms >= 1, got {num_sensors} sensors on {num_arms} arms"
        )));
    }
    if !(max_radius > 0.0 && max_radius.is_finite()) {
        return Err(invalid(format!("max_radius must be positive, got {max_radius}")));
    }

    const SPAN: f64 = PI;
    let r0 = max_radius / 10.0;
    let growth = (max_radius / r0).ln() / SPAN;

    let base = num_sensors / num_arms;
    let extra = num_sensors % num_arms;
    let mut sensors = Vec::with_capacity(num_sensors);
    for arm in 0..num_arms {
        let count = base + usize::from(arm < extra);
        let rotation = 2.0 * PI * arm as f64 / num_arms as f64;
        for s in 0..count {
            let t = if count == 1 {
                SPAN
            } else {
                SPAN * s as f64 / (count - 1) as f64
            };
            let r = r0 * (growth * t).exp();
            let theta = t + rotation;
            sensors.push(Position::new(r * theta.cos(), r * theta.sin(), 0.0));
        }
    }
    ArrayGeometry::new(sensors)
}

/// Draws `count` sensors uniformly without replacement. The result is a pure
/// function of `(geometry, count, seed)`; the chosen sensors keep their
/// original relative order and remember their parent indices.
pub fn subsample_sensors(geometry: &ArrayGeometry, count: usize, seed: u64) -> Result<ArrayGeometry> {
    if count == 0 || count > geometry.len() {
        return Err(invalid(format!(
            "cannot draw {count} sensors from an array of {}",
            geometry.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, geometry.len(), count).into_vec();
    picked.sort_unstable();
    let sensors = picked.iter().map(|&i| geometry.sensors[i]).collect();
    let parents = picked.iter().map(|&i| geometry.parent_indices[i]).collect();
    ArrayGeometry::with_parent_indices(sensors, parents)
}

/// Rectangular scan region `(x_min, x_max, y_min, y_max)` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }
}

/// Row-major planar lattice of candidate source positions. Point `(i, j)`
/// (row `i` along y, column `j` along x) has linear index `i * nx + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingGrid {
    points: Vec<Position>,
    nx: usize,
    ny: usize,
    extent: Extent,
    plane_offset: f64,
}

fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

/// Builds the scan lattice with both endpoints included on each axis. A
/// single-point axis sits at the middle of its range.
pub fn make_grid(extent: Extent, nx: usize, ny: usize, plane_offset: f64) -> Result<ImagingGrid> {
    let Extent {
        x_min,
        x_max,
        y_min,
        y_max,
    } = extent;
    if !(x_min < x_max && y_min < y_max) {
        return Err(invalid(format!("degenerate extent {extent:?}")));
    }
    if nx == 0 || ny == 0 {
        return Err(invalid("grid needs at least one point per axis"));
    }
    if !(plane_offset > 0.0 && plane_offset.is_finite()) {
        return Err(invalid(format!("plane_offset must be positive, got {plane_offset}")));
    }
    let xs = lattice(x_min, x_max, nx);
    let ys = lattice(y_min, y_max, ny);
    let points = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Position::new(x, y, plane_offset)))
        .collect();
    Ok(ImagingGrid {
        points,
        nx,
        ny,
        extent,
        plane_offset,
    })
}

impl ImagingGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Position {
        self.points[index]
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn plane_offset(&self) -> f64 {
        self.plane_offset
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.ny && col < self.nx);
        row * self.nx + col
    }

    /// `(row, col)` of a linear index.
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.nx, index % self.nx)
    }

    /// Spacing along x, or the full x range for a single-column grid.
    pub fn spacing_x(&self) -> f64 {
        if self.nx > 1 {
            (self.extent.x_max - self.extent.x_min) / (self.nx - 1) as f64
        } else {
            self.extent.x_max - self.extent.x_min
        }
    }

    pub fn spacing_y(&self) -> f64 {
        if self.ny > 1 {
            (self.extent.y_max - self.extent.y_min) / (self.ny - 1) as f64
        } else {
            self.extent.y_max - self.extent.y_min
        }
    }

    /// Grid point nearest to `p` (ties toward the lower index).
    pub fn nearest(&self, p: &Position) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, q) in self.points.iter().enumerate() {
            let d = (q - p).norm();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Chebyshev distance between two cells, in cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }

    /// Reorders the grid points; `order[k]` names the old index placed at `k`.
    /// The lattice metadata is kept, so only use this for point-wise
    /// algorithms (everything except slices and mainlobe widths).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() {
            return Err(invalid("permutation length does not match the grid"));
        }
        for &k in order {
            if k >= self.len() || std::mem::replace(&mut seen[k], true) {
                return Err(invalid("not a permutation"));
            }
        }
        Ok(Self {
            points: order.iter().map(|&k| self.points[k]).collect(),
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_arm_single_sensor() {
        let g = spiral_array(1, 1, 1.0).unwrap();
        assert_eq!(g.len(), 1);
        let p = g.sensor(0);
        assert_eq!(p.z, 0.0);
        assert!(p.xy().norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn paper_sized_spiral() {
        let g = spiral_array(56, 7, 0.5).unwrap();
        assert_eq!(g.len(), 56);
        for (i, a) in g.sensors().iter().enumerate() {
            assert!(a.xy().norm() <= 0.5 + 1e-12);
            for b in &g.sensors()[i + 1..] {
                assert!((a - b).norm() > 0.0);
            }
        }
        // 8 per arm, laid out arm after arm with radii increasing along each arm
        for arm in 0..7 {
            let radii: Vec<f64> = (0..8).map(|s| g.sensor(arm * 8 + s).norm()).collect();
            assert!(radii.windows(2).all(|w| w[0] <= w[1]), "{radii:?}");
            assert!((radii[7] - 0.5).abs() < 1e-12);
            assert!((radii[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn four_arms_are_rotationally_symmetric() {
        let g = spiral_array(4, 4, 1.0).unwrap();
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 2.0);
        for k in 0..4 {
            let turned = rot * g.sensor(k);
            let next = g.sensor((k + 1) % 4);
            assert!((turned - next).norm() < 1e-12);
        }
    }

    #[test]
    fn spiral_rejects_bad_arguments() {
        assert!(spiral_array(3, 4, 1.0).is_err());
        assert!(spiral_array(3, 0, 1.0).is_err());
        assert!(spiral_array(3, 1, 0.0).is_err());
        assert!(spiral_array(3, 1, f64::NAN).is_err());
    }

    #[test]
    fn geometry_rejects_duplicates() {
        let p = Position::new(0.1, 0.2, 0.0);
        assert!(ArrayGeometry::new(vec![p, p]).is_err());
        assert!(ArrayGeometry::new(vec![]).is_err());
    }

    #[test]
    fn grid_center_and_corners() {
        let g = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 3, 3, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(4), Position::new(0.0, 0.0, 1.0));

        let g = make_grid(Extent::new(0.0, 1.0, 0.0, 1.0), 2, 2, 0.7).unwrap();
        let expect = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        for (k, (x, y)) in expect.into_iter().enumerate() {
            assert_eq!(g.point(k), Position::new(x, y, 0.7));
        }

        let g = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 40, 40, 1.0).unwrap();
        assert_eq!(g.len(), 1600);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        let e = Extent::new(-1.0, 1.0, -1.0, 1.0);
        assert!(make_grid(Extent::new(1.0, 1.0, -1.0, 1.0), 2, 2, 1.0).is_err());
        assert!(make_grid(e, 0, 2, 1.0).is_err());
        assert!(make_grid(e, 2, 2, 0.0).is_err());
        assert!(make_grid(e, 2, 2, -1.0).is_err());
    }

    #[test]
    fn full_subsample_keeps_the_set() {
        let g = spiral_array(12, 3, 0.4).unwrap();
        let s = subsample_sensors(&g, 12, 9).unwrap();
        assert_eq!(s.sensors(), g.sensors());
        assert!(subsample_sensors(&g, 13, 9).is_err());
    }

    #[test]
    fn subsample_is_seeded() {
        let g = spiral_array(56, 7, 0.5).unwrap();
        let a = subsample_sensors(&g, 10, 42).unwrap();
        let b = subsample_sensors(&g, 10, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut idx = a.parent_indices().to_vec();
        idx.dedup();
        assert_eq!(idx.len(), 10);
        for (k, &p) in a.parent_indices().iter().enumerate() {
            assert_eq!(a.sensor(k), g.sensor(p));
        }
        let c = subsample_sensors(&g, 10, 43).unwrap();
        assert_ne!(a.parent_indices(), c.parent_indices());
    }

    proptest! {
        #[test]
        fn linear_index_round_trip(nx in 1usize..30, ny in 1usize..30) {
            let g = make_grid(Extent::new(-1.0, 2.0, -0.5, 0.5), nx, ny, 0.3).unwrap();
            for k in 0..g.len() {
                let (i, j) = g.row_col(k);
                prop_assert_eq!(g.index(i, j), k);
            }
        }

        #[test]
        fn spirals_have_distinct_sensors(arms in 1usize..9, per in 1usize..9, radius in 0.01f64..3.0) {
            let g = spiral_array(arms * per, arms, radius).unwrap();
            prop_assert_eq!(g.len(), arms * per);
            for p in g.sensors() {
                prop_assert!(p.norm() <= radius * (1.0 + 1e-12));
            }
        }
    }
}
