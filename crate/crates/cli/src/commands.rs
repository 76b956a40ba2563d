//! The four subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use csbeam::beamformers::Algorithm;
use csbeam::geometry::Position;
use csbeam::imaging_metrics::{compute_metrics_with_floor, MapMetrics};
use csbeam::io::{load_power_map, save_geometry, save_time_series};
use csbeam::signal_sim::bin_index;
use rayon::prelude::*;

use crate::config::{RunConfig, Snr};
use crate::error::CliError;
use crate::output::{cell_stem, write_cell, write_comparison, write_json_atomic, write_timings, CellRecord, Manifest, TOOLKIT_VERSION};
use crate::pipeline::{Analysis, Experiment};

pub const PARALLELISM_ENV: &str = "CSBEAM_PARALLELISM";

/// Command-line settings layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trace: bool,
    /// Worker count from the environment; wins over the config.
    pub parallelism: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &RunConfig) -> RunConfig {
        let mut c = config.clone();
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        c
    }
}

/// Reads `CSBEAM_PARALLELISM`; unset or empty means no override.
pub fn parallelism_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(PARALLELISM_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config {
                path: PARALLELISM_ENV.into(),
                message: format!("'{v}' is not a positive integer"),
            }),
        },
        _ => Ok(None),
    }
}

fn pool(config: &RunConfig, overrides: &Overrides) -> Result<rayon::ThreadPool, CliError> {
    let n = overrides
        .parallelism
        .or(config.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start {n} workers: {e}")))
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn io_err(path: &Path) -> impl Fn(csbeam::Error) -> CliError + '_ {
    move |e| match e {
        csbeam::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Core(other),
    }
}

fn manifest(experiment: &Experiment, command: &'static str) -> Manifest {
    Manifest {
        toolkit_version: TOOLKIT_VERSION,
        command,
        config: experiment.config.clone(),
        sensors: experiment.geometry.len(),
        grid_points: experiment.grid.len(),
        records: Vec::new(),
        files: Vec::new(),
        cells: Vec::new(),
        comparison: None,
        timings: None,
    }
}

/// Writes the geometry, the clean record and one noisy record per SNR.
pub fn simulate(config: &RunConfig, overrides: &Overrides) -> Result<Manifest, CliError> {
    let config = overrides.apply(config);
    let experiment = Experiment::prepare(&config)?;
    let out = &config.output_dir;
    prepare_output(out)?;
    let mut m = manifest(&experiment, "simulate");

    let geometry_path = out.join("geometry.csv");
    save_geometry(&geometry_path, &experiment.geometry).map_err(io_err(&geometry_path))?;
    m.files.push("geometry.csv".into());
    let clean_path = out.join("clean.csbt");
    save_time_series(&clean_path, &experiment.clean).map_err(io_err(&clean_path))?;
    m.files.push("clean.csbt".into());
    for &snr in &config.snr_db {
        let record = experiment.record(snr)?;
        let name = format!("noisy_snr{}.csbt", snr.label());
        let path = out.join(&name);
        save_time_series(&path, &record.series).map_err(io_err(&path))?;
        m.files.push(name);
        m.records.push(record.summary());
    }
    write_json_atomic(&out.join("simulate_manifest.json"), &m)?;
    Ok(m)
}

/// Outcome of a command that runs cells.
#[derive(Debug)]
pub struct RunReport {
    pub manifest: Manifest,
    pub cells: Vec<CellRecord>,
}

impl RunReport {
    /// `Err` when some cell failed or did not converge; the outputs exist.
    pub fn into_result(self) -> Result<RunReport, CliError> {
        let bad: Vec<String> = self
            .cells
            .iter()
            .filter(|c| c.status.is_failure())
            .map(|c| format!("{} {}", cell_stem(c.algorithm, c.snr.parse().unwrap_or(Snr::Infinite), c.frequency), c.status.as_str()))
            .collect();
        if bad.is_empty() {
            Ok(self)
        } else {
            Err(CliError::CellsFailed(format!("{} cell(s) failed: {}", bad.len(), bad.join(", "))))
        }
    }
}

fn run_cells(
    experiment: &Experiment,
    pool: &rayon::ThreadPool,
    snr: Snr,
    frequencies: &[f64],
    algorithms: &[Algorithm],
    trace: bool,
    timings: &mut Vec<(String, f64)>,
) -> Result<(crate::pipeline::RecordSummary, Vec<CellRecord>), CliError> {
    let out = &experiment.config.output_dir;
    let record = experiment.record(snr)?;
    let analyses: Vec<Analysis> = pool.install(|| {
        frequencies
            .par_iter()
            .map(|&f| experiment.analyze(&record, f))
            .collect::<Result<_, _>>()
    })?;
    let jobs: Vec<(&Analysis, Algorithm)> = analyses
        .iter()
        .flat_map(|a| algorithms.iter().map(move |&alg| (a, alg)))
        .collect();
    let results: Vec<Result<(CellRecord, f64), CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(analysis, alg)| {
                let start = Instant::now();
                let (result, inputs) = experiment.beamform(analysis, alg, trace);
                let secs = start.elapsed().as_secs_f64();
                let cell = write_cell(
                    out,
                    &experiment.grid,
                    alg,
                    snr,
                    analysis.frequency,
                    result,
                    inputs,
                    |m| experiment.truth_for(m),
                    trace,
                )?;
                Ok((cell, secs))
            })
            .collect()
    });
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        let (cell, secs) = r?;
        timings.push((cell_stem(cell.algorithm, snr, cell.frequency), secs));
        cells.push(cell);
    }
    Ok((record.summary(), cells))
}

/// Runs every (algorithm, SNR, frequency) cell of the config. Cells that
/// fail are recorded, not returned as errors; see [`RunReport::into_result`].
pub fn sweep(config: &RunConfig, overrides: &Overrides) -> Result<RunReport, CliError> {
    let config = overrides.apply(config);
    let pool = pool(&config, overrides)?;
    let start = Instant::now();
    let experiment = Experiment::prepare(&config)?;
    let out = config.output_dir.clone();
    prepare_output(&out)?;
    let mut m = manifest(&experiment, "sweep");
    let mut timings = vec![("synthesis".to_string(), start.elapsed().as_secs_f64())];
    let mut cells = Vec::new();
    // Records are processed one at a time to bound memory.
    for &snr in &config.snr_db {
        let (summary, mut c) = run_cells(&experiment, &pool, snr, &config.frequencies, &config.algorithms, overrides.trace, &mut timings)?;
        m.records.push(summary);
        cells.append(&mut c);
    }
    // Sweep order: algorithm, then SNR, then frequency.
    let order = |c: &CellRecord| {
        let a = config.algorithms.iter().position(|&x| x == c.algorithm);
        let s = config.snr_db.iter().position(|x| x.label() == c.snr);
        let f = config.frequencies.iter().position(|&x| x == c.frequency);
        (a, s, f)
    };
    cells.sort_by_key(order);

    let comparison = out.join("comparison.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&comparison)?);
    write_comparison(&cells, &mut w)?;
    std::io::Write::flush(&mut w)?;
    timings.push(("total".to_string(), start.elapsed().as_secs_f64()));
    write_timings(&out.join("timings.txt"), &timings)?;

    m.cells = cells.clone();
    m.comparison = Some("comparison.csv".into());
    m.timings = Some("timings.txt".into());
    write_json_atomic(&out.join("manifest.json"), &m)?;
    Ok(RunReport { manifest: m, cells })
}

/// Runs a single cell, simulating its record on the way.
pub fn beamform(
    config: &RunConfig,
    overrides: &Overrides,
    algorithm: Algorithm,
    snr: Snr,
    frequency: f64,
) -> Result<RunReport, CliError> {
    let mut config = overrides.apply(config);
    bin_index(frequency, config.sampling.rate, config.sampling.block_size).map_err(|e| CliError::Config {
        path: "--freq".into(),
        message: e.to_string(),
    })?;
    if !config.algorithms.contains(&algorithm) {
        config.algorithms.push(algorithm);
    }
    let pool = pool(&config, overrides)?;
    let experiment = Experiment::prepare(&config)?;
    prepare_output(&config.output_dir)?;
    let mut m = manifest(&experiment, "beamform");
    let mut timings = Vec::new();
    let (summary, cells) = run_cells(&experiment, &pool, snr, &[frequency], &[algorithm], overrides.trace, &mut timings)?;
    m.records.push(summary);
    m.cells = cells.clone();
    write_json_atomic(&config.output_dir.join("beamform_manifest.json"), &m)?;
    Ok(RunReport { manifest: m, cells })
}

/// Metrics of a saved map (CSV plus JSON sidecar).
pub fn metrics(map_path: &Path, truth: Option<Position>, floor_db: f64) -> Result<MapMetrics, CliError> {
    let (map, grid) = load_power_map(map_path).map_err(io_err(map_path))?;
    Ok(compute_metrics_with_floor(&map, &grid, truth, floor_db)?)
}
