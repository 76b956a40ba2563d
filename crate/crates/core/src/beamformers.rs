//! Imaging algorithms. Each maps observations and a steering model to a
//! [`PowerMap`] of per-grid-point source power.
//!
//! - [`cb`]: conventional beamforming, `w^H R w` with `w = g / (g^H g)`.
//! - [`csb1`]: basis pursuit denoising on one frequency-domain snapshot; the
//!   map is `|S_k|^2`.
//! - [`csb2`]: nonnegative basis pursuit denoising on the vectorized
//!   cross-spectral matrix through the lifted steering matrix; the map is the
//!   recovered power vector itself.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signal_sim::{vectorize_csm_with, CrossSpectralMatrix, SnapshotSet};
use crate::sparse_solver::{solve_bpdn, BpdnProblem, BpdnSolution, SolverTolerances, TraceRow};
use crate::wave_model::{CsmEntries, LiftedMatrix, SteeringMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cb,
    Csb1,
    Csb2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Cb, Algorithm::Csb1, Algorithm::Csb2];

    /// Short identifier used in file names and configs.
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Cb => "cb",
            Algorithm::Csb1 => "csb1",
            Algorithm::Csb2 => "csb2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Cb => "CB",
            Algorithm::Csb1 => "CSB-I",
            Algorithm::Csb2 => "CSB-II",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cb" => Ok(Algorithm::Cb),
            "csb1" | "csb-i" => Ok(Algorithm::Csb1),
            "csb2" | "csb-ii" => Ok(Algorithm::Csb2),
            other => Err(invalid(format!("unknown algorithm '{other}' (expected cb, csb1 or csb2)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub residual_norm: f64,
    pub trace: Vec<TraceRow>,
}

impl SolverDiagnostics {
    fn from_solution(s: &BpdnSolution) -> Self {
        Self {
            iterations: s.iterations,
            converged: s.converged,
            residual_norm: s.residual_norm,
            trace: s.trace.clone(),
        }
    }
}

/// Nonnegative source power per grid point, Pa^2.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    values: Vec<f64>,
    frequency: f64,
    algorithm: Algorithm,
    delta: Option<f64>,
    block_count: usize,
    diagnostics: Option<SolverDiagnostics>,
}

impl PowerMap {
    pub fn new(values: Vec<f64>, frequency: f64, algorithm: Algorithm) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("power map is empty"));
        }
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("map value {k} is {} (must be finite and >= 0)", values[k])));
        }
        Ok(Self {
            values,
            frequency,
            algorithm,
            delta: None,
            block_count: 1,
            diagnostics: None,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    /// Constraint radius used by the CSB solvers.
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn diagnostics(&self) -> Option<&SolverDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// False only when a solver stopped without meeting its tolerances.
    pub fn converged(&self) -> bool {
        self.diagnostics.as_ref().is_none_or(|d| d.converged)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        best
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_block_count(mut self, block_count: usize) -> Self {
        self.block_count = block_count;
        self
    }

    pub fn with_diagnostics(mut self, diagnostics: SolverDiagnostics) -> Self {
        self.diagnostics = Some(diagnostics);
        self
    }

    /// Reorders values; `order[k]` names the old index placed at `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            values: order.iter().map(|&k| self.values[k]).collect(),
            ..self.clone()
        }
    }
}

/// How the constraint radius `delta` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaPolicy {
    Explicit(f64),
    /// Derived from the per-channel noise variance `noise_power` of the
    /// quantity being fitted (the analysis bin for CSB-I and CSB-II).
    FromNoisePower {
        noise_power: f64,
        safety: f64,
        /// Number of independent blocks behind the CSM (CSB-II only).
        block_count: f64,
        /// Per-channel signal power in the same units as `noise_power`.
        /// When given, CSB-II also budgets for the signal-noise cross terms
        /// of the sample CSM.
        signal_power: Option<f64>,
        /// CSB-II fits only the off-diagonal CSM entries.
        diagonal_removed: bool,
    },
}

impl DeltaPolicy {
    /// The bare noise-power policy: no cross-term budget, full CSM.
    pub fn from_noise_power(noise_power: f64, safety: f64, block_count: f64) -> Self {
        DeltaPolicy::FromNoisePower {
            noise_power,
            safety,
            block_count,
            signal_power: None,
            diagonal_removed: false,
        }
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

/// `safety * sigma * sqrt(M)`: the expected norm of an `M`-channel complex
/// noise vector with per-channel variance `sigma^2`.
pub fn resolve_delta_csb1(policy: &DeltaPolicy, m: usize) -> Result<f64> {
    match *policy {
        DeltaPolicy::Explicit(v) => {
            check_nonneg("delta", v)?;
            Ok(v)
        }
        DeltaPolicy::FromNoisePower {
            noise_power, safety, ..
        } => {
            check_nonneg("noise power", noise_power)?;
            check_nonneg("safety", safety)?;
            Ok(safety * (noise_power * m as f64).sqrt())
        }
    }
}

/// Radius for the CSM fit. With noise variance `s2`, `K` blocks and `M`
/// sensors:
///
/// - full CSM: `safety * s2 * (sqrt(M) + M / sqrt(K))`, the norm of the
///   noise diagonal `s2 I` plus the sampling error of all `M^2` entries;
/// - off-diagonal CSM: `safety * s2 * sqrt(M (M - 1) / K)`, sampling error
///   only, since the removed diagonal carries the noise bias;
/// - with `signal_power = ps`, both add
///   `safety * sqrt(2 ps s2) * M / sqrt(K)` for the signal-noise cross terms.
pub fn resolve_delta_csb2(policy: &DeltaPolicy, m: usize) -> Result<f64> {
    match *policy {
        DeltaPolicy::Explicit(v) => {
            check_nonneg("delta", v)?;
            Ok(v)
        }
        DeltaPolicy::FromNoisePower {
            noise_power,
            safety,
            block_count,
            signal_power,
            diagonal_removed,
        } => {
            check_nonneg("noise power", noise_power)?;
            check_nonneg("safety", safety)?;
            if !(block_count >= 1.0) {
                return Err(invalid(format!("block count must be >= 1, got {block_count}")));
            }
            if noise_power == 0.0 {
                return Ok(0.0);
            }
            let mf = m as f64;
            let root_k = block_count.sqrt();
            let noise = if diagonal_removed {
                noise_power * (mf * (mf - 1.0)).sqrt() / root_k
            } else {
                noise_power * (mf.sqrt() + mf / root_k)
            };
            let cross = match signal_power {
                Some(ps) => {
                    check_nonneg("signal power", ps)?;
                    (2.0 * ps * noise_power).sqrt() * mf / root_k
                }
                None => 0.0,
            };
            Ok(safety * (noise + cross))
        }
    }
}

/// Per-channel signal power left in a CSM after removing the noise variance.
pub fn estimate_signal_power(csm: &CrossSpectralMatrix, noise_power: f64) -> f64 {
    (csm.trace() / csm.sensors() as f64 - noise_power).max(0.0)
}

/// Solver settings shared by the CSB algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub tolerances: SolverTolerances,
    /// Keep the per-iteration solver trace in the map diagnostics.
    pub trace: bool,
}

pub fn csb1(snapshot: &DVector<C64>, steering: &SteeringMatrix, delta: f64) -> Result<PowerMap> {
    csb1_with(snapshot, steering, delta, &SolveOptions::default())
}

pub fn csb1_with(snapshot: &DVector<C64>, steering: &SteeringMatrix, delta: f64, options: &SolveOptions) -> Result<PowerMap> {
    if snapshot.len() != steering.sensors() {
        return Err(invalid(format!(
            "snapshot has {} entries for {} sensors",
            snapshot.len(),
            steering.sensors()
        )));
    }
    let problem = BpdnProblem::new(steering.entries().clone(), snapshot.clone(), delta)?
        .with_tolerances(options.tolerances)
        .with_trace(options.trace);
    let solution = solve_bpdn(&problem)?;
    let values = solution.x.iter().map(|s| s.norm_sqr()).collect();
    Ok(PowerMap::new(values, steering.frequency(), Algorithm::Csb1)?
        .with_delta(delta)
        .with_diagnostics(SolverDiagnostics::from_solution(&solution)))
}

/// CSB-I on every block, averaging the per-point powers. An extension for
/// noisy data; the single-snapshot [`csb1`] is the plain algorithm.
pub fn csb1_multi(snapshots: &SnapshotSet, steering: &SteeringMatrix, delta: f64) -> Result<PowerMap> {
    csb1_multi_with(snapshots, steering, delta, &SolveOptions::default())
}

pub fn csb1_multi_with(
    snapshots: &SnapshotSet,
    steering: &SteeringMatrix,
    delta: f64,
    options: &SolveOptions,
) -> Result<PowerMap> {
    let k = snapshots.len();
    let mut sum = vec![0.0; steering.points()];
    let mut diagnostics: Option<SolverDiagnostics> = None;
    for y in snapshots.blocks() {
        let map = csb1_with(y, steering, delta, options)?;
        for (acc, v) in sum.iter_mut().zip(map.values()) {
            *acc += v;
        }
        let d = map.diagnostics.expect("csb1 records diagnostics");
        diagnostics = Some(match diagnostics {
            None => d,
            Some(acc) => SolverDiagnostics {
                iterations: acc.iterations.max(d.iterations),
                converged: acc.converged && d.converged,
                residual_norm: acc.residual_norm.max(d.residual_norm),
                trace: acc.trace,
            },
        });
    }
    let values = sum.into_iter().map(|v| v / k as f64).collect();
    Ok(PowerMap::new(values, steering.frequency(), Algorithm::Csb1)?
        .with_delta(delta)
        .with_block_count(k)
        .with_diagnostics(diagnostics.expect("at least one block")))
}

pub fn csb2(csm: &CrossSpectralMatrix, lifted: &LiftedMatrix, delta: f64) -> Result<PowerMap> {
    csb2_with(csm, lifted, delta, &SolveOptions::default())
}

/// Fits `vec(R)` (restricted to the entries kept by the lifted matrix) with
/// nonnegative powers.
pub fn csb2_with(csm: &CrossSpectralMatrix, lifted: &LiftedMatrix, delta: f64, options: &SolveOptions) -> Result<PowerMap> {
    if csm.sensors() != lifted.sensors() {
        return Err(invalid(format!(
            "CSM is {0}x{0} but the lifted matrix models {1} sensors",
            csm.sensors(),
            lifted.sensors()
        )));
    }
    let y = vectorize_csm_with(csm, lifted.layout());
    let problem = BpdnProblem::new(lifted.entries().clone(), y, delta)?
        .nonneg(true)
        .with_tolerances(options.tolerances)
        .with_trace(options.trace);
    let solution = solve_bpdn(&problem)?;
    let values = solution.x.iter().map(|p| p.re.max(0.0)).collect();
    Ok(PowerMap::new(values, csm.frequency(), Algorithm::Csb2)?
        .with_delta(delta)
        .with_block_count(csm.block_count())
        .with_diagnostics(SolverDiagnostics::from_solution(&solution)))
}

/// Conventional beamforming: `w^H R w` with `w = g / (g^H g)` per point.
pub fn cb(csm: &CrossSpectralMatrix, steering: &SteeringMatrix) -> Result<PowerMap> {
    if csm.sensors() != steering.sensors() {
        return Err(invalid("CSM and steering matrix disagree on the sensor count"));
    }
    let r = csm.entries();
    let values = (0..steering.points())
        .map(|k| {
            let g = steering.entries().column(k);
            let w = g / C64::from(g.norm_squared());
            w.dotc(&(r * &w)).re.max(0.0)
        })
        .collect();
    Ok(PowerMap::new(values, steering.frequency(), Algorithm::Cb)?.with_block_count(csm.block_count()))
}

/// CSM entries a CSB-II run fits.
pub fn csb2_layout(diagonal_removed: bool) -> CsmEntries {
    if diagonal_removed {
        CsmEntries::OffDiagonal
    } else {
        CsmEntries::Full
    }
}
