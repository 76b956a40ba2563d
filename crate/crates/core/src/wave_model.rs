//! Free-field propagation model: steering vectors, the steering matrix that
//! maps grid-point source amplitudes to sensor spectra, and its lifted form
//! that maps grid-point source powers to cross-spectral matrices.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, ImagingGrid, Position};

pub type C64 = Complex<f64>;

/// Speed of sound in air at 20 °C, m/s.
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Sensor-source distances below this are treated as singular.
pub const MIN_DISTANCE: f64 = 1e-9;

fn check_medium(frequency: f64, speed: f64) -> Result<()> {
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(invalid(format!("frequency must be positive, got {frequency}")));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid(format!("propagation speed must be positive, got {speed}")));
    }
    Ok(())
}

/// Monopole Green's function `exp(-j w r / c) / (4 PI r)`.
#[inline]
pub fn greens_function(distance: f64, frequency: f64, speed: f64) -> C64 {
    let k = 2.0 * PI * frequency / speed;
    C64::from_polar(1.0 / (4.0 * PI * distance), -k * distance)
}

/// Array response to a unit monopole at `source`.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    source: &Position,
    frequency: f64,
    speed: f64,
) -> Result<DVector<C64>> {
    check_medium(frequency, speed)?;
    let mut out = DVector::zeros(geometry.len());
    for (i, s) in geometry.sensors().iter().enumerate() {
        let r = (s - source).norm();
        if !(r >= MIN_DISTANCE) {
            return Err(Error::DegenerateGeometry {
                sensor: i,
                point: 0,
                distance: r,
            });
        }
        out[i] = greens_function(r, frequency, speed);
    }
    Ok(out)
}

/// Complex `M x N` transfer matrix from grid points to sensors at one
/// frequency. Column `k` is the steering vector of grid point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    entries: DMatrix<C64>,
    frequency: f64,
    speed: f64,
}

pub fn steering_matrix(
    geometry: &ArrayGeometry,
    grid: &ImagingGrid,
    frequency: f64,
    speed: f64,
) -> Result<SteeringMatrix> {
    check_medium(frequency, speed)?;
    let m = geometry.len();
    let mut entries = DMatrix::zeros(m, grid.len());
    for (k, p) in grid.points().iter().enumerate() {
        for (i, s) in geometry.sensors().iter().enumerate() {
            let r = (s - p).norm();
            if !(r >= MIN_DISTANCE) {
                return Err(Error::DegenerateGeometry {
                    sensor: i,
                    point: k,
                    distance: r,
                });
            }
            entries[(i, k)] = greens_function(r, frequency, speed);
        }
    }
    Ok(SteeringMatrix {
        entries,
        frequency,
        speed,
    })
}

impl SteeringMatrix {
    /// Wraps a precomputed matrix. Every entry must be finite and nonzero.
    pub fn from_entries(entries: DMatrix<C64>, frequency: f64, speed: f64) -> Result<Self> {
        check_medium(frequency, speed)?;
        if entries.is_empty() {
            return Err(invalid("empty steering matrix"));
        }
        if entries
            .iter()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()) || z.norm_sqr() == 0.0)
        {
            return Err(invalid("steering entries must be finite and nonzero"));
        }
        Ok(Self {
            entries,
            frequency,
            speed,
        })
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn sensors(&self) -> usize {
        self.entries.nrows()
    }

    pub fn points(&self) -> usize {
        self.entries.ncols()
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn column(&self, k: usize) -> DVector<C64> {
        self.entries.column(k).into_owned()
    }

    /// Reorders columns; `order[k]` is the old column placed at `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let cols: Vec<_> = order.iter().map(|&k| self.entries.column(k)).collect();
        Self {
            entries: DMatrix::from_columns(&cols),
            ..*self
        }
    }
}

/// Which `(i, l)` cross-spectral entries a lifted model keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsmEntries {
    /// All `M^2` entries, row `(i, l)` at `i * M + l`.
    #[default]
    Full,
    /// The `M (M - 1)` entries with `i != l`, in the same row-major order
    /// with the diagonal skipped.
    OffDiagonal,
}

impl CsmEntries {
    /// The `(i, l)` pairs in row order.
    pub fn pairs(self, m: usize) -> Vec<(usize, usize)> {
        (0..m)
            .flat_map(|i| (0..m).map(move |l| (i, l)))
            .filter(|&(i, l)| self == CsmEntries::Full || i != l)
            .collect()
    }

    pub fn count(self, m: usize) -> usize {
        match self {
            CsmEntries::Full => m * m,
            CsmEntries::OffDiagonal => m * (m - 1),
        }
    }
}

/// Column `k` is `vec(g_k g_k^H)` restricted to the chosen entries, so that
/// `lifted * p` is the cross-spectral matrix of incoherent sources with
/// powers `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    entries: DMatrix<C64>,
    sensors: usize,
    layout: CsmEntries,
}

pub fn lift_steering_matrix(steering: &SteeringMatrix) -> LiftedMatrix {
    lift_with(steering, CsmEntries::Full)
}

/// Lifted matrix keeping only the requested CSM entries.
pub fn lift_with(steering: &SteeringMatrix, layout: CsmEntries) -> LiftedMatrix {
    let g = steering.entries();
    let m = g.nrows();
    let pairs = layout.pairs(m);
    let mut entries = DMatrix::zeros(pairs.len(), g.ncols());
    for k in 0..g.ncols() {
        for (row, &(i, l)) in pairs.iter().enumerate() {
            entries[(row, k)] = g[(i, k)] * g[(l, k)].conj();
        }
    }
    LiftedMatrix {
        entries,
        sensors: m,
        layout,
    }
}

impl LiftedMatrix {
    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn layout(&self) -> CsmEntries {
        self.layout
    }

    pub fn points(&self) -> usize {
        self.entries.ncols()
    }

    /// Row holding the `(i, l)` entry, if kept.
    pub fn row_of(&self, i: usize, l: usize) -> Option<usize> {
        match self.layout {
            CsmEntries::Full => Some(i * self.sensors + l),
            CsmEntries::OffDiagonal if i == l => None,
            CsmEntries::OffDiagonal => Some(i * (self.sensors - 1) + l - usize::from(l > i)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, spiral_array, subsample_sensors, Extent};
    use approx::assert_relative_eq;

    fn single_sensor() -> ArrayGeometry {
        ArrayGeometry::new(vec![Position::zeros()]).unwrap()
    }

    #[test]
    fn unit_distance_amplitude() {
        let g = steering_vector(&single_sensor(), &Position::new(0.0, 0.0, 1.0), 1234.0, 343.0).unwrap();
        assert_relative_eq!(g[0].norm(), 1.0 / (4.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(g[0].norm(), 0.079577, epsilon = 1e-6);
    }

    #[test]
    fn full_cycle_phase_is_real_positive() {
        let g = steering_vector(&single_sensor(), &Position::new(0.0, 0.0, 1.0), 343.0, 343.0).unwrap();
        assert!(g[0].re > 0.0);
        assert!(g[0].im.abs() < 1e-15);
    }

    #[test]
    fn equidistant_sensors_match() {
        let geo = ArrayGeometry::new(vec![Position::new(0.3, 0.0, 0.0), Position::new(-0.3, 0.0, 0.0)]).unwrap();
        let g = steering_vector(&geo, &Position::new(0.0, 0.2, 0.8), 5000.0, 343.0).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn singular_source_is_rejected() {
        let err = steering_vector(&single_sensor(), &Position::zeros(), 100.0, 343.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { sensor: 0, .. }));

        let geo = ArrayGeometry::new(vec![Position::new(1.0, 0.0, 0.0), Position::new(0.0, 0.0, 0.5)]).unwrap();
        let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 3, 3, 0.5).unwrap();
        let err = steering_matrix(&geo, &grid, 100.0, 343.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { sensor: 1, point: 4, .. }));
    }

    #[test]
    fn one_by_one_matrix_matches_vector() {
        let geo = single_sensor();
        let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 1, 1, 0.9).unwrap();
        let gm = steering_matrix(&geo, &grid, 700.0, 343.0).unwrap();
        let gv = steering_vector(&geo, &grid.point(0), 700.0, 343.0).unwrap();
        assert_eq!(gm.column(0), gv);
    }

    #[test]
    fn paper_sized_matrix_magnitudes() {
        let geo = subsample_sensors(&spiral_array(56, 7, 0.5).unwrap(), 10, 42).unwrap();
        let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 40, 40, 1.0).unwrap();
        let gm = steering_matrix(&geo, &grid, 5000.0, 343.0).unwrap();
        assert_eq!((gm.sensors(), gm.points()), (10, 1600));
        for k in 0..grid.len() {
            let p = grid.point(k);
            for i in 0..10 {
                let s = geo.sensor(i);
                let r = ((s.x - p.x).powi(2) + (s.y - p.y).powi(2) + (s.z - p.z).powi(2)).sqrt();
                assert_relative_eq!(gm.entries()[(i, k)].norm(), 1.0 / (4.0 * PI * r), max_relative = 1e-12);
            }
        }
        // a grid point coinciding with a source reproduces its steering vector
        let gv = steering_vector(&geo, &grid.point(77), 5000.0, 343.0).unwrap();
        assert_eq!(gm.column(77), gv);
    }

    #[test]
    fn lifting_small_cases() {
        let geo = single_sensor();
        let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 3, 1, 1.0).unwrap();
        let gm = steering_matrix(&geo, &grid, 500.0, 343.0).unwrap();
        let lifted = lift_steering_matrix(&gm);
        assert_eq!(lifted.entries().shape(), (1, 3));
        for k in 0..3 {
            assert_relative_eq!(lifted.entries()[(0, k)].re, gm.entries()[(0, k)].norm_sqr(), max_relative = 1e-14);
        }

        let a = C64::new(0.3, -1.2);
        let b = C64::new(-0.7, 0.4);
        let gm = SteeringMatrix::from_entries(DMatrix::from_column_slice(2, 1, &[a, b]), 100.0, 343.0).unwrap();
        let lifted = lift_steering_matrix(&gm);
        let col: Vec<C64> = lifted.entries().column(0).iter().copied().collect();
        assert_eq!(col, vec![a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj()]);
    }

    #[test]
    fn lifted_structure() {
        let geo = subsample_sensors(&spiral_array(56, 7, 0.5).unwrap(), 10, 42).unwrap();
        let grid = make_grid(Extent::new(-1.0, 1.0, -1.0, 1.0), 21, 21, 1.0).unwrap();
        let gm = steering_matrix(&geo, &grid, 5000.0, 343.0).unwrap();
        let lifted = lift_steering_matrix(&gm);
        assert_eq!(lifted.entries().shape(), (100, 441));
        let off = lift_with(&gm, CsmEntries::OffDiagonal);
        assert_eq!(off.entries().shape(), (90, 441));
        for k in 0..441 {
            for i in 0..10 {
                let d = lifted.entries()[(lifted.row_of(i, i).unwrap(), k)];
                assert_eq!(d.im, 0.0);
                assert!(d.re > 0.0);
                assert_relative_eq!(d.re, gm.entries()[(i, k)].norm_sqr(), max_relative = 1e-14);
                for l in 0..10 {
                    let a = lifted.entries()[(i * 10 + l, k)];
                    let b = lifted.entries()[(l * 10 + i, k)];
                    assert_eq!(a, b.conj());
                    if i != l {
                        assert_eq!(off.entries()[(off.row_of(i, l).unwrap(), k)], a);
                    }
                }
            }
        }
    }

    #[test]
    fn doubling_distances_halves_magnitudes() {
        let geo = spiral_array(8, 2, 0.3).unwrap();
        let src = Position::new(0.1, -0.2, 0.6);
        let far: Vec<Position> = geo.sensors().iter().map(|s| s * 2.0).collect();
        let far_geo = ArrayGeometry::new(far).unwrap();
        let (f, c) = (2000.0, 343.0);
        let near = steering_vector(&geo, &src, f, c).unwrap();
        let doubled = steering_vector(&far_geo, &(src * 2.0), f, c).unwrap();
        for i in 0..geo.len() {
            let r = (geo.sensor(i) - src).norm();
            assert_relative_eq!(doubled[i].norm(), 0.5 * near[i].norm(), max_relative = 1e-12);
            let shift = C64::from_polar(1.0, -2.0 * PI * f * r / c);
            let expect = near[i] * 0.5 * shift;
            assert_relative_eq!((doubled[i] - expect).norm(), 0.0, epsilon = 1e-12 * near[i].norm());
        }
    }
}
