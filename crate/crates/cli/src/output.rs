//! Files written by the commands: per-cell maps, the comparison table and
//! the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use csbeam::beamformers::{Algorithm, PowerMap};
use csbeam::geometry::{ImagingGrid, Position};
use csbeam::imaging_metrics::{axial_slice, compute_metrics, Axis, MapMetrics, SliceThrough, DEFAULT_FLOOR_DB};
use csbeam::io::{save_pgm, save_power_map, write_slice_csv, write_trace_csv};
use serde::Serialize;

use crate::config::{RunConfig, Snr};
use crate::error::CliError;
use crate::pipeline::{CellInputs, RecordSummary};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Localization error above this many cells marks a row degraded.
pub const DEGRADED_CELLS: usize = 5;
/// A max sidelobe at or above this level marks a row degraded.
pub const DEGRADED_SIDELOBE_DB: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NotConverged,
    /// The solver returned the zero map; nothing to normalize.
    EmptyMap,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::NotConverged => "not_converged",
            CellStatus::EmptyMap => "empty_map",
            CellStatus::Failed => "failed",
        }
    }

    /// Whether the cell makes the command exit nonzero.
    pub fn is_failure(self) -> bool {
        matches!(self, CellStatus::NotConverged | CellStatus::Failed)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CellFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_x: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pgm: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
}

/// One (algorithm, SNR, frequency) result as recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub algorithm: Algorithm,
    pub snr: String,
    pub frequency: f64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: CellFiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<CellDiagnostics>,
    pub inputs: CellInputs,
    #[serde(skip)]
    pub metrics: Option<MapMetrics>,
}

impl CellRecord {
    pub fn degraded(&self) -> Option<bool> {
        self.metrics.as_ref().map(|m| {
            m.localization_error_cells.is_some_and(|c| c > DEGRADED_CELLS) || m.max_sidelobe_db >= DEGRADED_SIDELOBE_DB
        })
    }
}

/// File stem of a cell: `{alg}_snr{label}_f{frequency}`.
pub fn cell_stem(algorithm: Algorithm, snr: Snr, frequency: f64) -> String {
    format!("{}_snr{}_f{}", algorithm.id(), snr.label(), frequency)
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn core_to_cli(e: csbeam::Error) -> CliError {
    match e {
        csbeam::Error::Io(io) => CliError::Io(io.to_string()),
        other => CliError::Core(other),
    }
}

/// Writes every file of a cell under `root/maps` and returns its record.
/// A failed solve yields a record with no files.
#[allow(clippy::too_many_arguments)]
pub fn write_cell(
    root: &Path,
    grid: &ImagingGrid,
    algorithm: Algorithm,
    snr: Snr,
    frequency: f64,
    result: Result<PowerMap, csbeam::Error>,
    inputs: CellInputs,
    truth: impl Fn(&PowerMap) -> Position,
    trace: bool,
) -> Result<CellRecord, CliError> {
    let mut record = CellRecord {
        algorithm,
        snr: snr.label(),
        frequency,
        status: CellStatus::Ok,
        error: None,
        files: CellFiles::default(),
        delta: None,
        diagnostics: None,
        inputs,
        metrics: None,
    };
    let map = match result {
        Ok(map) => map,
        Err(csbeam::Error::Io(e)) => return Err(CliError::Io(e.to_string())),
        Err(e) => {
            record.status = CellStatus::Failed;
            record.error = Some(e.to_string());
            return Ok(record);
        }
    };
    record.delta = map.delta();
    record.diagnostics = map.diagnostics().map(|d| CellDiagnostics {
        iterations: d.iterations,
        converged: d.converged,
        residual_norm: d.residual_norm,
    });
    if !map.converged() {
        record.status = CellStatus::NotConverged;
    }

    let dir = root.join("maps");
    fs::create_dir_all(&dir)?;
    let stem = cell_stem(algorithm, snr, frequency);
    let path = |suffix: &str| dir.join(format!("{stem}{suffix}"));

    let map_path = path(".csv");
    save_power_map(&map_path, &map, grid).map_err(core_to_cli)?;
    record.files.map = Some(relative(root, &map_path));
    record.files.sidecar = Some(relative(root, &path(".json")));

    if trace {
        if let Some(d) = map.diagnostics() {
            let p = path("_trace.csv");
            let mut w = std::io::BufWriter::new(fs::File::create(&p)?);
            write_trace_csv(&d.trace, &mut w).map_err(core_to_cli)?;
            w.flush()?;
            record.files.trace = Some(relative(root, &p));
        }
    }

    if map.max() == 0.0 {
        if record.status == CellStatus::Ok {
            record.status = CellStatus::EmptyMap;
        }
        return Ok(record);
    }

    let metrics = compute_metrics(&map, grid, Some(truth(&map))).map_err(core_to_cli)?;
    let p = path("_metrics.json");
    csbeam::io::write_json(&p, &metrics).map_err(core_to_cli)?;
    record.files.metrics = Some(relative(root, &p));

    let slice = axial_slice(&map, grid, Axis::X, SliceThrough::Peak, DEFAULT_FLOOR_DB).map_err(core_to_cli)?;
    let p = path("_slice_x.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&p)?);
    write_slice_csv(&slice, Axis::X, &mut w).map_err(core_to_cli)?;
    w.flush()?;
    record.files.slice_x = Some(relative(root, &p));

    let p = path(".pgm");
    save_pgm(&p, &map, grid, DEFAULT_FLOOR_DB).map_err(core_to_cli)?;
    record.files.pgm = Some(relative(root, &p));

    record.metrics = Some(metrics);
    Ok(record)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const COMPARISON_HEADER: &str = "algorithm,snr_db,frequency,status,peak_index,peak_x,peak_y,dynamic_range_db,\
mainlobe_width_m,max_sidelobe_db,localization_error_m,localization_error_cells,zero_count,degraded,converged,iterations,delta";

/// The comparison table: one row per cell, in sweep order.
pub fn write_comparison<W: Write>(cells: &[CellRecord], mut w: W) -> Result<(), CliError> {
    writeln!(w, "{COMPARISON_HEADER}")?;
    for c in cells {
        let m = c.metrics.as_ref();
        let fields = [
            c.algorithm.id().to_string(),
            c.snr.clone(),
            c.frequency.to_string(),
            c.status.as_str().to_string(),
            opt(m.map(|m| m.peak_index)),
            opt(m.map(|m| m.peak_position[0])),
            opt(m.map(|m| m.peak_position[1])),
            opt(m.map(|m| m.dynamic_range_db)),
            opt(m.map(|m| m.mainlobe_width_m)),
            opt(m.map(|m| m.max_sidelobe_db)),
            opt(m.and_then(|m| m.localization_error_m)),
            opt(m.and_then(|m| m.localization_error_cells)),
            opt(m.map(|m| m.zero_count)),
            opt(c.degraded()),
            opt(c.diagnostics.as_ref().map(|d| d.converged)),
            opt(c.diagnostics.as_ref().map(|d| d.iterations)),
            opt(c.delta),
        ];
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub toolkit_version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub sensors: usize,
    pub grid_points: usize,
    pub records: Vec<RecordSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<String>,
    /// Wall-clock timings live in a separate text file so that the
    /// manifest stays byte-reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<String>,
}

/// Writes `value` as pretty JSON via a temporary file and a rename, so the
/// target either is absent or complete.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    csbeam::io::write_json(&tmp, value).map_err(core_to_cli)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Human-readable timing lines: `label seconds`.
pub fn write_timings(path: &Path, timings: &[(String, f64)]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for (label, secs) in timings {
        writeln!(w, "{label} {secs:.3}")?;
    }
    w.flush()?;
    Ok(())
}
