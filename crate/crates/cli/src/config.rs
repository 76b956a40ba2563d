//! Declarative run configuration (a single JSON document).

use std::fmt;
use std::path::{Path, PathBuf};

use csbeam::beamformers::Algorithm;
use csbeam::signal_sim::{bin_index, sample_count, Window};
use csbeam::sparse_solver::SolverTolerances;
use csbeam::wave_model::DEFAULT_SPEED_OF_SOUND;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub geometry: GeometrySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleSpec>,
    pub grid: GridSpec,
    pub scene: Vec<SourceSpec>,
    pub sampling: SamplingSpec,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    /// Analysis frequencies, Hz. Each must be an exact DFT bin.
    pub frequencies: Vec<f64>,
    pub snr_db: Vec<Snr>,
    #[serde(default)]
    pub snr_reference: SnrReference,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub delta: DeltaSpec,
    #[serde(default)]
    pub csb1: Csb1Spec,
    #[serde(default)]
    pub csb2: Csb2Spec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Master seed for every random stream of the run.
    pub seed: u64,
    /// Worker count for sweeps; defaults to the available cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Spiral { sensors: usize, arms: usize, max_radius: f64 },
    /// CSV `index,x,y,z`; relative paths resolve against the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// `[x_min, x_max, y_min, y_max]`, meters.
    pub extent: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Distance from the array plane, meters.
    pub plane_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub position: [f64; 3],
    /// Peak amplitude for tones, RMS for broadband sources, at 1 m.
    pub amplitude: f64,
    pub waveform: WaveformSpec,
}

/// Broadband seeds are derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSpec {
    Tone { frequency: f64 },
    Broadband { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub rate: f64,
    /// Seconds.
    pub duration: f64,
    pub block_size: usize,
    #[serde(default)]
    pub window: Window,
    /// Fraction of a block shared with the next one.
    #[serde(default = "default_overlap")]
    pub overlap: f64,
}

fn default_overlap() -> f64 {
    0.5
}

/// An SNR level in dB, or noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    Infinite,
}

impl Snr {
    /// `inf`, or the dB value in shortest form (`-10`, `2.5`).
    pub fn label(self) -> String {
        match self {
            Snr::Infinite => "inf".to_string(),
            Snr::Db(v) => format!("{v}"),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inf" | "Inf" | "infinity" => Ok(Snr::Infinite),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Snr::Db)
                .ok_or_else(|| format!("'{other}' is neither a dB value nor \"inf\"")),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Snr::Infinite => s.serialize_str("inf"),
            Snr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Snr::Db(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What the configured SNR compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    /// Mean-square signal over mean-square noise of the time series.
    #[default]
    Time,
    /// The same ratio inside the analysis bin for an on-bin tone: the noise
    /// is raised by the window's tone processing gain.
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaSpec {
    /// From the realized noise power in the analysis bin.
    FromNoisePower {
        safety: f64,
        /// Budget for the signal-noise cross terms of the sample CSM (CSB-II).
        #[serde(default = "yes")]
        cross_term: bool,
    },
    Explicit { csb1: f64, csb2: f64 },
}

fn yes() -> bool {
    true
}

impl Default for DeltaSpec {
    fn default() -> Self {
        DeltaSpec::FromNoisePower {
            safety: 1.1,
            cross_term: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Csb1Spec {
    #[serde(default)]
    pub snapshot: Csb1Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Csb1Snapshot {
    /// The first block only.
    #[default]
    First,
    /// Every block, with the per-point powers averaged.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Csb2Spec {
    /// Fit only the off-diagonal CSM entries.
    #[serde(default)]
    pub diagonal_removal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let t = SolverTolerances::default();
        Self {
            primal_tol: t.primal_tol,
            dual_tol: t.dual_tol,
            max_iters: t.max_iters,
        }
    }
}

impl From<SolverSpec> for SolverTolerances {
    fn from(s: SolverSpec) -> Self {
        SolverTolerances {
            primal_tol: s.primal_tol,
            dual_tol: s.dual_tol,
            max_iters: s.max_iters,
        }
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| config_err("", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file. A relative geometry path is
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let GeometrySpec::File { path: g } = &mut config.geometry {
            if g.is_relative() {
                if let Some(dir) = path.parent() {
                    *g = dir.join(&*g);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every field, naming the offending one.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(config_err("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version)));
        }
        match self.geometry {
            GeometrySpec::Spiral { sensors, arms, max_radius } => {
                if sensors == 0 || arms == 0 {
                    return Err(config_err("geometry", "sensors and arms must be positive"));
                }
                if !(max_radius > 0.0 && max_radius.is_finite()) {
                    return Err(config_err("geometry.max_radius", "must be positive"));
                }
                if let Some(sub) = self.subsample {
                    if sub.count == 0 || sub.count > sensors {
                        return Err(config_err("subsample.count", format!("must lie in 1..={sensors}")));
                    }
                }
            }
            GeometrySpec::File { .. } => {
                if self.subsample.is_some_and(|s| s.count == 0) {
                    return Err(config_err("subsample.count", "must be positive"));
                }
            }
        }
        let [x0, x1, y0, y1] = self.grid.extent;
        if !(x0 < x1 && y0 < y1) {
            return Err(config_err("grid.extent", "needs x_min < x_max and y_min < y_max"));
        }
        if self.grid.nx == 0 || self.grid.ny == 0 {
            return Err(config_err("grid", "nx and ny must be positive"));
        }
        if !(self.grid.plane_offset > 0.0 && self.grid.plane_offset.is_finite()) {
            return Err(config_err("grid.plane_offset", "must be positive"));
        }
        if self.scene.is_empty() {
            return Err(config_err("scene", "needs at least one source"));
        }
        let s = &self.sampling;
        if !(s.rate > 0.0 && s.rate.is_finite()) {
            return Err(config_err("sampling.rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&s.overlap) {
            return Err(config_err("sampling.overlap", "must lie in [0, 1)"));
        }
        if s.block_size == 0 || s.block_size > sample_count(s.duration, s.rate) {
            return Err(config_err(
                "sampling.block_size",
                format!("must lie in 1..={} (the record length)", sample_count(s.duration, s.rate)),
            ));
        }
        for (i, src) in self.scene.iter().enumerate() {
            if !(src.amplitude >= 0.0 && src.amplitude.is_finite()) {
                return Err(config_err(format!("scene[{i}].amplitude"), "must be finite and nonnegative"));
            }
            let top = match src.waveform {
                WaveformSpec::Tone { frequency } => frequency,
                WaveformSpec::Broadband { low, high } => {
                    if !(0.0 <= low && low < high) {
                        return Err(config_err(format!("scene[{i}].waveform"), "needs 0 <= low < high"));
                    }
                    high
                }
            };
            if !(top > 0.0 && 2.0 * top < s.rate) {
                return Err(config_err(format!("scene[{i}].waveform"), format!("{top} Hz is not below the Nyquist frequency {} Hz", s.rate / 2.0)));
            }
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(config_err("speed_of_sound", "must be positive"));
        }
        if self.frequencies.is_empty() {
            return Err(config_err("frequencies", "needs at least one frequency"));
        }
        for (i, &f) in self.frequencies.iter().enumerate() {
            bin_index(f, s.rate, s.block_size).map_err(|e| config_err(format!("frequencies[{i}]"), e.to_string()))?;
        }
        if self.snr_db.is_empty() {
            return Err(config_err("snr_db", "needs at least one level"));
        }
        if self.algorithms.is_empty() {
            return Err(config_err("algorithms", "needs at least one of cb, csb1, csb2"));
        }
        match self.delta {
            DeltaSpec::FromNoisePower { safety, .. } if !(safety > 0.0 && safety.is_finite()) => {
                return Err(config_err("delta.safety", "must be positive"));
            }
            DeltaSpec::Explicit { csb1, csb2 } if !(csb1 >= 0.0 && csb2 >= 0.0 && csb1.is_finite() && csb2.is_finite()) => {
                return Err(config_err("delta", "explicit radii must be finite and nonnegative"));
            }
            _ => {}
        }
        let t = self.solver;
        if !(t.primal_tol > 0.0 && t.dual_tol > 0.0) || t.max_iters == 0 {
            return Err(config_err("solver", "tolerances and max_iters must be positive"));
        }
        if self.parallelism == Some(0) {
            return Err(config_err("parallelism", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "version": 1,
        "geometry": {"kind": "spiral", "sensors": 56, "arms": 7, "max_radius": 0.5},
        "subsample": {"count": 10, "seed": 42},
        "grid": {"extent": [-1, 1, -1, 1], "nx": 21, "ny": 21, "plane_offset": 1},
        "scene": [{"position": [0, 0, 1], "amplitude": 1, "waveform": {"kind": "tone", "frequency": 5000}}],
        "sampling": {"rate": 48000, "duration": 2, "block_size": 4800},
        "frequencies": [5000],
        "snr_db": ["inf", 0, -10],
        "algorithms": ["csb1", "csb2", "cb"],
        "seed": 7
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_json(SAMPLE).unwrap();
        assert_eq!(c.snr_db, vec![Snr::Infinite, Snr::Db(0.0), Snr::Db(-10.0)]);
        assert_eq!(c.sampling.window, Window::Rectangular);
        assert_eq!(c.sampling.overlap, 0.5);
        assert_eq!(c.speed_of_sound, 343.0);
        assert_eq!(c.delta, DeltaSpec::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn round_trip_is_identity() {
        let c = RunConfig::from_json(SAMPLE).unwrap();
        let again = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_json(), c.to_json());
    }

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> Result<RunConfig, CliError> {
        let mut v: serde_json::Value = serde_json::from_str(SAMPLE).unwrap();
        edit(&mut v);
        RunConfig::from_json(&v.to_string())
    }

    fn field_of(r: Result<RunConfig, CliError>) -> String {
        match r {
            Err(CliError::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(with(|v| v["frequencies"] = serde_json::json!([5000, 5005]))), "frequencies[1]");
        assert_eq!(field_of(with(|v| v["version"] = serde_json::json!(2))), "version");
        assert_eq!(field_of(with(|v| v["subsample"]["count"] = serde_json::json!(60))), "subsample.count");
        assert_eq!(field_of(with(|v| v["sampling"]["block_size"] = serde_json::json!(200000))), "sampling.block_size");
        assert_eq!(field_of(with(|v| v["scene"][0]["waveform"]["frequency"] = serde_json::json!(30000))), "scene[0].waveform");
        assert_eq!(field_of(with(|v| v["algorithms"] = serde_json::json!([]))), "algorithms");
        assert!(with(|v| v["algorithms"] = serde_json::json!(["music"])).is_err());
        assert!(with(|v| v["snr_db"] = serde_json::json!(["loud"])).is_err());
        assert!(with(|v| v["unknown"] = serde_json::json!(1)).is_err());
    }

    #[test]
    fn snr_labels() {
        assert_eq!(Snr::Db(-10.0).label(), "-10");
        assert_eq!(Snr::Db(2.5).label(), "2.5");
        assert_eq!(Snr::Infinite.label(), "inf");
        assert_eq!("inf".parse::<Snr>().unwrap(), Snr::Infinite);
        assert_eq!("-15".parse::<Snr>().unwrap(), Snr::Db(-15.0));
    }

    use proptest::prelude::*;

    fn snr() -> impl Strategy<Value = Snr> {
        prop_oneof![Just(Snr::Infinite), (-400i32..400).prop_map(|v| Snr::Db(v as f64 / 8.0))]
    }

    proptest! {
        #[test]
        fn round_trip_holds_for_varied_configs(
            snrs in prop::collection::vec(snr(), 1..5),
            algs in prop::sample::subsequence(Algorithm::ALL.to_vec(), 1..=3),
            explicit in any::<bool>(),
            radius in 0.0f64..10.0,
            bin in any::<bool>(),
            overlap in 0.0f64..0.9,
            seed in any::<u64>(),
            parallelism in prop::option::of(1usize..16),
        ) {
            let mut c = RunConfig::from_json(SAMPLE).unwrap();
            c.snr_db = snrs;
            c.algorithms = algs;
            c.delta = if explicit {
                DeltaSpec::Explicit { csb1: radius, csb2: radius / 2.0 }
            } else {
                DeltaSpec::FromNoisePower { safety: 1.0 + radius, cross_term: radius > 5.0 }
            };
            c.snr_reference = if bin { SnrReference::Bin } else { SnrReference::Time };
            c.sampling.overlap = overlap;
            c.seed = seed;
            c.parallelism = parallelism;
            let again = RunConfig::from_json(&c.to_json()).unwrap();
            prop_assert_eq!(&again, &c);
        }
    }
}
