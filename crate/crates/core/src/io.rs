//! File formats.
//!
//! | artifact        | format                                                            |
//! |-----------------|-------------------------------------------------------------------|
//! | array geometry  | CSV `index,x,y,z`                                                 |
//! | time series     | binary, see [`write_time_series`]                                 |
//! | CSM             | CSV `i,l,re,im` + JSON sidecar [`CsmMetadata`]                    |
//! | power map       | CSV `index,x,y,value` + JSON sidecar [`MapMetadata`]              |
//! | axial slice     | CSV `x,db` or `y,db`                                              |
//! | solver trace    | CSV `iter,objective,primal_res,dual_res`                          |
//! | raster          | binary PGM (P5), 8-bit, `[floor_db, 0]` mapped linearly to 0..255 |
//!
//! Sidecars sit next to their CSV with the extension replaced by `json`.
//! Floats are written in Rust's shortest round-trip form, so equal values
//! always give equal bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::beamformers::{Algorithm, PowerMap, SolverDiagnostics};
use crate::error::{Error, Result};
use crate::geometry::{make_grid, ArrayGeometry, Extent, ImagingGrid, Position};
use crate::imaging_metrics::{normalize_db, Axis};
use crate::signal_sim::{CrossSpectralMatrix, TimeSeries, Window};
use crate::sparse_solver::TraceRow;
use crate::wave_model::C64;

pub const TIME_SERIES_MAGIC: &[u8; 4] = b"CSBT";
pub const TIME_SERIES_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => format_err(format!("{other:?}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// `map.csv` -> `map.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(format_err(format!("expected header {}, found {}", expected.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(())
}

fn records<R: Read, T: for<'de> Deserialize<'de>>(r: R, header: &[&str]) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    check_header(&mut reader, header)?;
    reader.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn check_indices(indices: impl Iterator<Item = usize>) -> Result<()> {
    for (expected, index) in indices.enumerate() {
        if index != expected {
            return Err(format_err(format!("row {expected} has index {index}; rows must be numbered 0, 1, 2, ...")));
        }
    }
    Ok(())
}

pub fn write_geometry_csv<W: Write>(geometry: &ArrayGeometry, mut w: W) -> Result<()> {
    writeln!(w, "index,x,y,z")?;
    for (i, p) in geometry.sensors().iter().enumerate() {
        writeln!(w, "{i},{},{},{}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn read_geometry_csv<R: Read>(r: R) -> Result<ArrayGeometry> {
    let rows: Vec<(usize, f64, f64, f64)> = records(r, &["index", "x", "y", "z"])?;
    check_indices(rows.iter().map(|row| row.0))?;
    ArrayGeometry::new(rows.iter().map(|&(_, x, y, z)| Position::new(x, y, z)).collect())
}

pub fn save_geometry(path: &Path, geometry: &ArrayGeometry) -> Result<()> {
    let mut w = create(path)?;
    write_geometry_csv(geometry, &mut w)?;
    Ok(w.flush()?)
}

pub fn load_geometry(path: &Path) -> Result<ArrayGeometry> {
    read_geometry_csv(open(path)?)
}

/// Little-endian binary: magic `CSBT`, `u32` version (1), `u32` channel
/// count `M`, `u64` sample count `L`, `f64` sample rate, then `M * L` `f64`
/// samples channel by channel.
pub fn write_time_series<W: Write>(series: &TimeSeries, mut w: W) -> Result<()> {
    w.write_all(TIME_SERIES_MAGIC)?;
    w.write_all(&TIME_SERIES_VERSION.to_le_bytes())?;
    w.write_all(&(series.num_channels() as u32).to_le_bytes())?;
    w.write_all(&(series.len() as u64).to_le_bytes())?;
    w.write_all(&series.sample_rate().to_le_bytes())?;
    for channel in series.channels() {
        for v in channel {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_time_series<R: Read>(mut r: R) -> Result<TimeSeries> {
    let mut header = [0u8; 28];
    r.read_exact(&mut header).map_err(|_| format_err("time series header is truncated"))?;
    if &header[0..4] != TIME_SERIES_MAGIC {
        return Err(format_err("not a time series file (bad magic)"));
    }
    let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().unwrap());
    let version = word(4);
    if version != TIME_SERIES_VERSION {
        return Err(format_err(format!("unsupported time series version {version}")));
    }
    let m = word(8) as usize;
    let len = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let sample_rate = f64::from_le_bytes(header[20..28].try_into().unwrap());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if Some(bytes.len()) != m.checked_mul(len).and_then(|n| n.checked_mul(8)) {
        return Err(format_err(format!("expected {m} x {len} samples, found {} bytes", bytes.len())));
    }
    let samples: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let channels = if len == 0 { vec![Vec::new(); m] } else { samples.chunks(len).map(<[f64]>::to_vec).collect() };
    TimeSeries::new(channels, sample_rate)
}

pub fn save_time_series(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = create(path)?;
    write_time_series(series, &mut w)?;
    Ok(w.flush()?)
}

pub fn load_time_series(path: &Path) -> Result<TimeSeries> {
    read_time_series(open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsmMetadata {
    pub frequency: f64,
    pub block_count: usize,
    pub block_size: usize,
    pub window: Window,
}

pub fn write_csm_csv<W: Write>(csm: &CrossSpectralMatrix, mut w: W) -> Result<()> {
    writeln!(w, "i,l,re,im")?;
    let r = csm.entries();
    for i in 0..r.nrows() {
        for l in 0..r.ncols() {
            writeln!(w, "{i},{l},{},{}", r[(i, l)].re, r[(i, l)].im)?;
        }
    }
    Ok(())
}

/// Reads an `M^2`-row CSM table (rows in any order).
pub fn read_csm_csv<R: Read>(r: R, metadata: &CsmMetadata) -> Result<CrossSpectralMatrix> {
    let rows: Vec<(usize, usize, f64, f64)> = records(r, &["i", "l", "re", "im"])?;
    let m = (rows.len() as f64).sqrt().round() as usize;
    if m * m != rows.len() || m == 0 {
        return Err(format_err(format!("{} CSM rows is not a square count", rows.len())));
    }
    let mut entries = DMatrix::from_element(m, m, C64::new(f64::NAN, 0.0));
    for (i, l, re, im) in rows {
        if i >= m || l >= m || !entries[(i, l)].re.is_nan() {
            return Err(format_err(format!("CSM entry ({i}, {l}) is out of range or repeated")));
        }
        entries[(i, l)] = C64::new(re, im);
    }
    CrossSpectralMatrix::from_entries(entries, metadata.block_count, metadata.frequency)
}

pub fn save_csm(path: &Path, csm: &CrossSpectralMatrix, metadata: &CsmMetadata) -> Result<()> {
    let mut w = create(path)?;
    write_csm_csv(csm, &mut w)?;
    w.flush()?;
    write_json(&sidecar_path(path), metadata)
}

pub fn load_csm(path: &Path) -> Result<(CrossSpectralMatrix, CsmMetadata)> {
    let metadata: CsmMetadata = read_json(&sidecar_path(path))?;
    Ok((read_csm_csv(open(path)?, &metadata)?, metadata))
}

/// Power-map sidecar. `plane_offset` lets a map be re-read onto its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub algorithm: Algorithm,
    pub frequency: f64,
    pub delta: Option<f64>,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub block_count: usize,
    #[serde(default = "default_plane_offset")]
    pub plane_offset: f64,
}

fn default_plane_offset() -> f64 {
    1.0
}

impl MapMetadata {
    pub fn of(map: &PowerMap, grid: &ImagingGrid) -> Self {
        Self {
            algorithm: map.algorithm(),
            frequency: map.frequency(),
            delta: map.delta(),
            converged: map.converged(),
            iterations: map.diagnostics().map(|d| d.iterations),
            block_count: map.block_count(),
            plane_offset: grid.plane_offset(),
        }
    }
}

pub fn write_power_map_csv<W: Write>(map: &PowerMap, grid: &ImagingGrid, mut w: W) -> Result<()> {
    if map.len() != grid.len() {
        return Err(Error::InvalidArgument(format!("map has {} values but the grid has {} points", map.len(), grid.len())));
    }
    writeln!(w, "index,x,y,value")?;
    for (k, (p, v)) in grid.points().iter().zip(map.values()).enumerate() {
        writeln!(w, "{k},{},{},{v}", p.x, p.y)?;
    }
    Ok(())
}

/// Reads a map table and rebuilds its row-major lattice from the distinct
/// x and y coordinates.
pub fn read_power_map_csv<R: Read>(r: R, metadata: &MapMetadata) -> Result<(PowerMap, ImagingGrid)> {
    let rows: Vec<(usize, f64, f64, f64)> = records(r, &["index", "x", "y", "value"])?;
    check_indices(rows.iter().map(|row| row.0))?;
    let distinct = |values: Vec<f64>| {
        let mut v = values;
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = distinct(rows.iter().map(|r| r.1).collect());
    let ys = distinct(rows.iter().map(|r| r.2).collect());
    if xs.len() * ys.len() != rows.len() {
        return Err(format_err("map points do not form a full rectangular lattice"));
    }
    let widen = |v: &[f64]| if v.len() == 1 { (v[0] - 0.5, v[0] + 0.5) } else { (v[0], v[v.len() - 1]) };
    let ((x_min, x_max), (y_min, y_max)) = (widen(&xs), widen(&ys));
    let grid = make_grid(Extent::new(x_min, x_max, y_min, y_max), xs.len(), ys.len(), metadata.plane_offset)?;
    for (k, row) in rows.iter().enumerate() {
        let p = grid.point(k);
        let tol = 1e-9 * (1.0 + p.x.abs().max(p.y.abs()));
        if (p.x - row.1).abs() > tol || (p.y - row.2).abs() > tol {
            return Err(format_err(format!("map row {k} is not in row-major lattice order")));
        }
    }
    let mut map = PowerMap::new(rows.iter().map(|r| r.3).collect(), metadata.frequency, metadata.algorithm)?.with_block_count(metadata.block_count);
    if let Some(delta) = metadata.delta {
        map = map.with_delta(delta);
    }
    if let Some(iterations) = metadata.iterations {
        map = map.with_diagnostics(SolverDiagnostics {
            iterations,
            converged: metadata.converged,
            residual_norm: f64::NAN,
            trace: Vec::new(),
        });
    }
    Ok((map, grid))
}

pub fn save_power_map(path: &Path, map: &PowerMap, grid: &ImagingGrid) -> Result<()> {
    let mut w = create(path)?;
    write_power_map_csv(map, grid, &mut w)?;
    w.flush()?;
    write_json(&sidecar_path(path), &MapMetadata::of(map, grid))
}

pub fn load_power_map(path: &Path) -> Result<(PowerMap, ImagingGrid)> {
    let metadata: MapMetadata = read_json(&sidecar_path(path))?;
    read_power_map_csv(open(path)?, &metadata)
}

pub fn write_slice_csv<W: Write>(slice: &[(f64, f64)], axis: Axis, mut w: W) -> Result<()> {
    writeln!(w, "{},db", if axis == Axis::X { "x" } else { "y" })?;
    for (coordinate, level) in slice {
        writeln!(w, "{coordinate},{level}")?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "iter,objective,primal_res,dual_res")?;
    for row in trace {
        writeln!(w, "{},{},{},{}", row.iter, row.objective, row.primal_res, row.dual_res)?;
    }
    Ok(())
}

/// Grayscale raster of the normalized map, one pixel per grid point, grid
/// rows in order. Levels map linearly from `[floor_db, 0]` to `0..=255`.
pub fn write_pgm<W: Write>(map: &PowerMap, grid: &ImagingGrid, floor_db: f64, mut w: W) -> Result<()> {
    if map.len() != grid.len() {
        return Err(Error::InvalidArgument(format!("map has {} values but the grid has {} points", map.len(), grid.len())));
    }
    let db = normalize_db(map, floor_db)?;
    write!(w, "P5\n{} {}\n255\n", grid.nx(), grid.ny())?;
    let pixels: Vec<u8> = db.iter().map(|&d| (255.0 * (1.0 - d / floor_db)).round().clamp(0.0, 255.0) as u8).collect();
    w.write_all(&pixels)?;
    Ok(())
}

pub fn save_pgm(path: &Path, map: &PowerMap, grid: &ImagingGrid, floor_db: f64) -> Result<()> {
    let mut w = create(path)?;
    write_pgm(map, grid, floor_db, &mut w)?;
    Ok(w.flush()?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::spiral_array;
    use proptest::prelude::*;

    fn grid() -> ImagingGrid {
        make_grid(Extent::new(-1.0, 1.0, -0.5, 0.5), 3, 2, 1.5).unwrap()
    }

    #[test]
    fn geometry_round_trip() {
        let geo = spiral_array(56, 7, 0.5).unwrap();
        let mut buf = Vec::new();
        write_geometry_csv(&geo, &mut buf).unwrap();
        assert!(buf.starts_with(b"index,x,y,z\n0,"));
        assert_eq!(read_geometry_csv(&buf[..]).unwrap(), geo);
    }

    #[test]
    fn geometry_rejects_bad_tables() {
        assert!(read_geometry_csv(&b"index,x,y\n0,1,2\n"[..]).is_err());
        assert!(read_geometry_csv(&b"index,x,y,z\n1,0,0,0\n"[..]).is_err());
        assert!(read_geometry_csv(&b"index,x,y,z\n0,0,zero,0\n"[..]).is_err());
    }

    #[test]
    fn time_series_layout() {
        let ts = TimeSeries::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 48000.0).unwrap();
        let mut buf = Vec::new();
        write_time_series(&ts, &mut buf).unwrap();
        assert_eq!(buf.len(), 28 + 4 * 8);
        assert_eq!(&buf[..4], b"CSBT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 48000.0);
        // channel-major
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), 2.0);
        assert_eq!(read_time_series(&buf[..]).unwrap(), ts);
        assert!(read_time_series(&buf[..40]).is_err());
        buf[0] = b'X';
        assert!(read_time_series(&buf[..]).is_err());
    }

    #[test]
    fn csm_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let entries = DMatrix::from_fn(2, 2, |i, l| if i == l { C64::new(2.0, 0.0) } else { C64::new(0.5, if i < l { 0.25 } else { -0.25 }) });
        let csm = CrossSpectralMatrix::from_entries(entries, 40, 5000.0).unwrap();
        let meta = CsmMetadata {
            frequency: 5000.0,
            block_count: 40,
            block_size: 4800,
            window: Window::Hann,
        };
        let path = dir.path().join("csm.csv");
        save_csm(&path, &csm, &meta).unwrap();
        let (back, meta_back) = load_csm(&path).unwrap();
        assert_eq!(back, csm);
        assert_eq!(meta_back, meta);
        let sidecar = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(sidecar.contains("\"window\": \"hann\""));
    }

    #[test]
    fn power_map_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid();
        let map = PowerMap::new(vec![0.0, 1.0, 0.25, 1e-12, 0.5, 0.125], 5000.0, Algorithm::Csb2)
            .unwrap()
            .with_delta(0.03)
            .with_block_count(100);
        let path = dir.path().join("map.csv");
        save_power_map(&path, &map, &g).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,x,y,value\n0,-1,-0.5,0\n1,0,-0.5,1\n"));
        let (back, back_grid) = load_power_map(&path).unwrap();
        assert_eq!(back.values(), map.values());
        assert_eq!(back.delta(), Some(0.03));
        assert_eq!(back.algorithm(), Algorithm::Csb2);
        assert_eq!(back_grid, g);
        let sidecar: serde_json::Value = read_json(&sidecar_path(&path)).unwrap();
        for key in ["algorithm", "frequency", "delta", "converged", "iterations", "block_count"] {
            assert!(sidecar.get(key).is_some(), "{key}");
        }
        assert_eq!(sidecar["algorithm"], "csb2");
    }

    #[test]
    fn pgm_levels() {
        let g = grid();
        let map = PowerMap::new(vec![1.0, 0.1, 0.0, 1e-5, 1e-11, 1.0], 5000.0, Algorithm::Cb).unwrap();
        let mut buf = Vec::new();
        write_pgm(&map, &g, -100.0, &mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 2\n255\n");
        // 0 dB, -10 dB, floor, -50 dB, below floor, 0 dB
        assert_eq!(&buf[11..], &[255, 230, 0, 128, 0, 255]);
    }

    #[test]
    fn trace_and_slice_tables() {
        let mut buf = Vec::new();
        write_trace_csv(
            &[TraceRow {
                iter: 1,
                objective: 0.5,
                primal_res: 1e-3,
                dual_res: 2.0,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,objective,primal_res,dual_res\n1,0.5,0.001,2\n");
        let mut buf = Vec::new();
        write_slice_csv(&[(-0.1, -3.5), (0.0, 0.0)], Axis::X, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,db\n-0.1,-3.5\n0,0\n");
    }

    proptest! {
        #[test]
        fn time_series_round_trip(channels in 1usize..4, len in 1usize..20, seed in any::<u64>()) {
            let data: Vec<Vec<f64>> = (0..channels)
                .map(|c| (0..len).map(|k| ((seed ^ (c * 31 + k) as u64) as f64).sin() * 1e3).collect())
                .collect();
            let ts = TimeSeries::new(data, 44100.0).unwrap();
            let mut buf = Vec::new();
            write_time_series(&ts, &mut buf).unwrap();
            prop_assert_eq!(read_time_series(&buf[..]).unwrap(), ts);
        }

        #[test]
        fn map_csv_round_trip_is_exact(values in proptest::collection::vec(0.0f64..1e6, 6)) {
            prop_assume!(values.iter().any(|&v| v > 0.0));
            let g = grid();
            let map = PowerMap::new(values, 2000.0, Algorithm::Cb).unwrap();
            let mut buf = Vec::new();
            write_power_map_csv(&map, &g, &mut buf).unwrap();
            let (back, _) = read_power_map_csv(&buf[..], &MapMetadata::of(&map, &g)).unwrap();
            prop_assert_eq!(back.values(), map.values());
        }
    }
}
