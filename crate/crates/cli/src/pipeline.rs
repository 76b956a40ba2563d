//! Scene synthesis and per-cell beamforming for a run configuration.

use std::hash::Hasher;

use csbeam::beamformers::{
    cb, csb1_multi_with, csb1_with, csb2_layout, csb2_with, estimate_signal_power, resolve_delta_csb1,
    resolve_delta_csb2, Algorithm, DeltaPolicy, PowerMap, SolveOptions,
};
use csbeam::geometry::{make_grid, spiral_array, subsample_sensors, ArrayGeometry, Extent, ImagingGrid, Position};
use csbeam::io::load_geometry;
use csbeam::signal_sim::{
    add_noise, estimate_csm, synthesize, to_snapshots, CrossSpectralMatrix, SnapshotSet, Source, SourceScene, TimeSeries,
};
use csbeam::wave_model::{lift_with, steering_matrix, LiftedMatrix, SteeringMatrix};
use serde::Serialize;

use crate::config::{Csb1Snapshot, DeltaSpec, GeometrySpec, RunConfig, Snr, SnrReference, WaveformSpec};
use crate::error::CliError;

/// 64-bit FNV-1a of a label.
pub fn fnv1a64(label: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(label.as_bytes());
    h.finish()
}

/// Seed of the noise added for one SNR level: `master ^ fnv1a64(label)`.
pub fn noise_seed(master: u64, snr: Snr) -> u64 {
    master ^ fnv1a64(&snr.label())
}

/// Seed of the `i`-th broadband source: `master ^ fnv1a64("source-{i}")`.
pub fn source_seed(master: u64, index: usize) -> u64 {
    master ^ fnv1a64(&format!("source-{index}"))
}

pub fn build_geometry(config: &RunConfig) -> Result<ArrayGeometry, CliError> {
    let full = match &config.geometry {
        GeometrySpec::Spiral { sensors, arms, max_radius } => spiral_array(*sensors, *arms, *max_radius)?,
        GeometrySpec::File { path } => load_geometry(path).map_err(|e| match e {
            csbeam::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
            other => CliError::Config {
                path: "geometry.path".into(),
                message: other.to_string(),
            },
        })?,
    };
    match config.subsample {
        Some(s) => subsample_sensors(&full, s.count, s.seed).map_err(|e| CliError::Config {
            path: "subsample".into(),
            message: e.to_string(),
        }),
        None => Ok(full),
    }
}

pub fn build_grid(config: &RunConfig) -> Result<ImagingGrid, CliError> {
    let [x0, x1, y0, y1] = config.grid.extent;
    Ok(make_grid(Extent::new(x0, x1, y0, y1), config.grid.nx, config.grid.ny, config.grid.plane_offset)?)
}

pub fn build_scene(config: &RunConfig) -> Result<SourceScene, CliError> {
    let sources = config
        .scene
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let [x, y, z] = s.position;
            let p = Position::new(x, y, z);
            match s.waveform {
                WaveformSpec::Tone { frequency } => Source::tone(p, frequency, s.amplitude),
                WaveformSpec::Broadband { low, high } => {
                    Source::broadband(p, low, high, s.amplitude, source_seed(config.seed, i))
                }
            }
        })
        .collect();
    Ok(SourceScene::new(sources)?)
}

/// One noisy realization of the clean record.
#[derive(Debug, Clone)]
pub struct NoisyRecord {
    pub snr: Snr,
    /// The time-domain SNR actually applied (absent when noiseless).
    pub time_snr_db: Option<f64>,
    pub seed: u64,
    pub series: TimeSeries,
    /// Realized time-domain noise power, averaged over channels.
    pub noise_power: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordSummary {
    pub snr: String,
    pub time_snr_db: Option<f64>,
    pub seed: u64,
    pub noise_power: f64,
}

impl NoisyRecord {
    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            snr: self.snr.label(),
            time_snr_db: self.time_snr_db,
            seed: self.seed,
            noise_power: self.noise_power,
        }
    }
}

/// Everything derived from one record at one analysis frequency.
pub struct Analysis {
    pub frequency: f64,
    pub snapshots: SnapshotSet,
    pub csm: CrossSpectralMatrix,
    pub steering: SteeringMatrix,
    /// Present when CSB-II is requested.
    pub lifted: Option<LiftedMatrix>,
    /// Per-channel noise variance inside the analysis bin.
    pub noise_bin: f64,
}

/// Numbers behind a cell's delta, kept for the manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CellInputs {
    pub block_count: usize,
    pub effective_block_count: f64,
    pub noise_bin_power: f64,
    pub signal_power: Option<f64>,
}

pub struct Experiment {
    pub config: RunConfig,
    pub geometry: ArrayGeometry,
    pub grid: ImagingGrid,
    pub scene: SourceScene,
    pub clean: TimeSeries,
}

impl Experiment {
    /// Builds the array, grid and scene and synthesizes the clean record.
    pub fn prepare(config: &RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let geometry = build_geometry(config)?;
        let grid = build_grid(config)?;
        let scene = build_scene(config)?;
        let clean = synthesize(
            &scene,
            &geometry,
            config.sampling.rate,
            config.sampling.duration,
            config.speed_of_sound,
            config.seed,
        )?;
        Ok(Self {
            config: config.clone(),
            geometry,
            grid,
            scene,
            clean,
        })
    }

    /// The time-domain SNR for a configured level.
    pub fn time_snr_db(&self, snr_db: f64) -> f64 {
        match self.config.snr_reference {
            SnrReference::Time => snr_db,
            SnrReference::Bin => {
                let s = &self.config.sampling;
                snr_db - 10.0 * s.window.tone_processing_gain(s.block_size).log10()
            }
        }
    }

    pub fn record(&self, snr: Snr) -> Result<NoisyRecord, CliError> {
        let seed = noise_seed(self.config.seed, snr);
        match snr {
            Snr::Infinite => Ok(NoisyRecord {
                snr,
                time_snr_db: None,
                seed,
                series: self.clean.clone(),
                noise_power: 0.0,
            }),
            Snr::Db(db) => {
                let time_snr = self.time_snr_db(db);
                let (series, realized) = add_noise(&self.clean, time_snr, seed)?;
                let noise_power = realized.iter().sum::<f64>() / realized.len() as f64;
                Ok(NoisyRecord {
                    snr,
                    time_snr_db: Some(time_snr),
                    seed,
                    series,
                    noise_power,
                })
            }
        }
    }

    pub fn analyze(&self, record: &NoisyRecord, frequency: f64) -> Result<Analysis, CliError> {
        let s = &self.config.sampling;
        let snapshots = to_snapshots(&record.series, s.block_size, frequency, s.window, s.overlap)?;
        let csm = estimate_csm(&snapshots);
        let steering = steering_matrix(&self.geometry, &self.grid, frequency, self.config.speed_of_sound)?;
        let lifted = self
            .config
            .algorithms
            .contains(&Algorithm::Csb2)
            .then(|| lift_with(&steering, csb2_layout(self.config.csb2.diagonal_removal)));
        let noise_bin = snapshots.bin_noise_variance(record.noise_power);
        Ok(Analysis {
            frequency,
            snapshots,
            csm,
            steering,
            lifted,
            noise_bin,
        })
    }

    fn delta_policy(&self, analysis: &Analysis, algorithm: Algorithm) -> (DeltaPolicy, CellInputs) {
        let mut inputs = CellInputs {
            block_count: analysis.snapshots.len(),
            effective_block_count: analysis.snapshots.effective_block_count(),
            noise_bin_power: analysis.noise_bin,
            signal_power: None,
        };
        let policy = match self.config.delta {
            DeltaSpec::Explicit { csb1, csb2 } => DeltaPolicy::Explicit(match algorithm {
                Algorithm::Csb2 => csb2,
                _ => csb1,
            }),
            DeltaSpec::FromNoisePower { safety, cross_term } => {
                let csb2 = algorithm == Algorithm::Csb2;
                let signal_power = (csb2 && cross_term).then(|| estimate_signal_power(&analysis.csm, analysis.noise_bin));
                inputs.signal_power = signal_power;
                DeltaPolicy::FromNoisePower {
                    noise_power: analysis.noise_bin,
                    safety,
                    block_count: if csb2 { inputs.effective_block_count } else { 1.0 },
                    signal_power,
                    diagonal_removed: csb2 && self.config.csb2.diagonal_removal,
                }
            }
        };
        (policy, inputs)
    }

    /// Runs one algorithm on one analysis.
    pub fn beamform(&self, analysis: &Analysis, algorithm: Algorithm, trace: bool) -> (Result<PowerMap, csbeam::Error>, CellInputs) {
        let (policy, inputs) = self.delta_policy(analysis, algorithm);
        let options = SolveOptions {
            tolerances: self.config.solver.into(),
            trace,
        };
        let m = self.geometry.len();
        let result = match algorithm {
            Algorithm::Cb => cb(&analysis.csm, &analysis.steering),
            Algorithm::Csb1 => resolve_delta_csb1(&policy, m).and_then(|delta| match self.config.csb1.snapshot {
                Csb1Snapshot::First => csb1_with(&analysis.snapshots.blocks()[0], &analysis.steering, delta, &options),
                Csb1Snapshot::Average => csb1_multi_with(&analysis.snapshots, &analysis.steering, delta, &options),
            }),
            Algorithm::Csb2 => resolve_delta_csb2(&policy, m).and_then(|delta| {
                let lifted = analysis.lifted.as_ref().expect("lifted matrix built for csb2");
                csb2_with(&analysis.csm, lifted, delta, &options)
            }),
        };
        (result, inputs)
    }

    /// The scene source closest to the map peak, used as localization truth.
    pub fn truth_for(&self, map: &PowerMap) -> Position {
        let peak = self.grid.point(map.argmax());
        self.scene
            .sources()
            .iter()
            .map(|s| s.position)
            .min_by(|a, b| (a - peak).norm().total_cmp(&(b - peak).norm()))
            .expect("scene has at least one source")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn noise_seeds_differ_per_level() {
        let a = noise_seed(7, Snr::Db(-10.0));
        let b = noise_seed(7, Snr::Db(0.0));
        assert_ne!(a, b);
        assert_eq!(a, 7 ^ fnv1a64("-10"));
    }
}
