//! Array data synthesis and spectral estimation.
//!
//! A [`SourceScene`] is propagated to every sensor with the monopole Green's
//! function, white Gaussian noise is added per channel at a target SNR, and
//! the result is cut into (optionally overlapping) blocks whose DFT at a
//! single bin gives the snapshots that feed CSB-I directly and the
//! cross-spectral matrix used by CB and CSB-II.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, Position};
use crate::wave_model::{CsmEntries, C64, MIN_DISTANCE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// `amplitude * cos(2 PI f t + phase)`.
    Tone { frequency: f64 },
    /// Gaussian noise band-limited to `[low, high]` Hz by an order-8
    /// Butterworth band-pass, scaled to unit RMS before `amplitude` applies.
    Broadband { low: f64, high: f64, seed: u64 },
}

impl Waveform {
    fn max_frequency(&self) -> f64 {
        match *self {
            Waveform::Tone { frequency } => frequency,
            Waveform::Broadband { high, .. } => high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub position: Position,
    pub waveform: Waveform,
    /// Pressure amplitude at 1 m (peak for tones, RMS for broadband), Pa.
    pub amplitude: f64,
    /// Phase offset of a tone, radians. Ignored for broadband sources.
    pub phase: f64,
}

impl Source {
    pub fn tone(position: Position, frequency: f64, amplitude: f64) -> Self {
        Self {
            position,
            waveform: Waveform::Tone { frequency },
            amplitude,
            phase: 0.0,
        }
    }

    pub fn broadband(position: Position, low: f64, high: f64, amplitude: f64, seed: u64) -> Self {
        Self {
            position,
            waveform: Waveform::Broadband { low, high, seed },
            amplitude,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    sources: Vec<Source>,
}

impl SourceScene {
    pub fn new(sources: Vec<Source>) -> Result<Self> {
        if sources.is_empty() {
            return Err(invalid("a scene needs at least one source"));
        }
        for (k, s) in sources.iter().enumerate() {
            if !(s.amplitude > 0.0 && s.amplitude.is_finite()) {
                return Err(invalid(format!("source {k}: amplitude must be positive")));
            }
            if !s.position.iter().all(|c| c.is_finite()) || !s.phase.is_finite() {
                return Err(invalid(format!("source {k}: non-finite position or phase")));
            }
            match s.waveform {
                Waveform::Tone { frequency } if !(frequency > 0.0 && frequency.is_finite()) => {
                    return Err(invalid(format!("source {k}: tone frequency must be positive")));
                }
                Waveform::Broadband { low, high, .. } if !(low > 0.0 && low < high && high.is_finite()) => {
                    return Err(invalid(format!("source {k}: band edges must satisfy 0 < low < high")));
                }
                _ => {}
            }
        }
        Ok(Self { sources })
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn max_frequency(&self) -> f64 {
        self.sources
            .iter()
            .map(|s| s.waveform.max_frequency())
            .fold(0.0, f64::max)
    }
}

/// Real multichannel record; channel `i` belongs to sensor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    channels: Vec<Vec<f64>>,
    sample_rate: f64,
}

impl TimeSeries {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("time series needs at least one channel"));
        }
        let len = channels[0].len();
        if len == 0 || channels.iter().any(|c| c.len() != len) {
            return Err(invalid("channels must be non-empty and of equal length"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid("sample rate must be positive"));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("time series contains non-finite samples"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Mean square of channel `i`.
    pub fn power(&self, i: usize) -> f64 {
        mean_square(&self.channels[i])
    }
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Number of samples in `duration` seconds.
pub fn sample_count(duration: f64, sample_rate: f64) -> usize {
    (duration * sample_rate + 1e-9).floor().max(0.0) as usize
}

/// Propagates every source to every sensor:
/// `y_i(t) = sum_s amplitude_s / (4 PI r_is) * w_s(t - r_is / c)`.
///
/// Tones are evaluated in closed form at the delayed instant. Broadband
/// waveforms are generated once per source and delayed with a 65-tap
/// Blackman-windowed sinc interpolator.
pub fn synthesize(
    scene: &SourceScene,
    geometry: &ArrayGeometry,
    sample_rate: f64,
    duration: f64,
    speed: f64,
    _seed: u64,
) -> Result<TimeSeries> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) || !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid("sample rate and speed must be positive"));
    }
    let len = sample_count(duration, sample_rate);
    if len == 0 {
        return Err(invalid(format!(
            "duration {duration} s at {sample_rate} Hz yields no samples"
        )));
    }
    let max_frequency = scene.max_frequency();
    if sample_rate <= 2.0 * max_frequency {
        return Err(Error::NyquistViolation {
            sample_rate,
            max_frequency,
        });
    }

    let m = geometry.len();
    let mut distances = vec![vec![0.0; m]; scene.sources().len()];
    for (s, src) in scene.sources().iter().enumerate() {
        for (i, sensor) in geometry.sensors().iter().enumerate() {
            let r = (sensor - src.position).norm();
            if !(r >= MIN_DISTANCE) {
                return Err(Error::DegenerateGeometry {
                    sensor: i,
                    point: s,
                    distance: r,
                });
            }
            distances[s][i] = r;
        }
    }

    let mut channels = vec![vec![0.0; len]; m];
    for (src, dist) in scene.sources().iter().zip(&distances) {
        match src.waveform {
            Waveform::Tone { frequency } => {
                for (out, &r) in channels.iter_mut().zip(dist) {
                    add_delayed_tone(out, src.amplitude / (4.0 * PI * r), frequency, src.phase, r / speed, sample_rate);
                }
            }
            Waveform::Broadband { low, high, seed } => {
                let max_delay = dist.iter().fold(0.0_f64, |a, &r| a.max(r / speed * sample_rate));
                let lead = max_delay.ceil() as usize + SINC_HALF_TAPS + 1;
                let waveform = band_limited_noise(lead + len + SINC_HALF_TAPS + 1, low, high, sample_rate, seed);
                for (out, &r) in channels.iter_mut().zip(dist) {
                    let gain = src.amplitude / (4.0 * PI * r);
                    add_delayed(out, &waveform, lead, r / speed * sample_rate, gain);
                }
            }
        }
    }
    TimeSeries::new(channels, sample_rate)
}

fn add_delayed_tone(out: &mut [f64], amplitude: f64, frequency: f64, phase: f64, delay: f64, sample_rate: f64) {
    let lag_cycles = frequency * delay;
    for (n, y) in out.iter_mut().enumerate() {
        // Work in cycles and drop the integer part to keep the phase exact on
        // long records.
        let cycles = frequency * n as f64 / sample_rate - lag_cycles;
        let frac = cycles - cycles.floor();
        *y += amplitude * (2.0 * PI * frac + phase).cos();
    }
}

const SINC_HALF_TAPS: usize = 32;

/// Adds `gain * source(n - delay)` where `source[k + lead]` is the waveform
/// at integer time `k`.
fn add_delayed(out: &mut [f64], source: &[f64], lead: usize, delay: f64, gain: f64) {
    let shift = delay.round();
    let frac = delay - shift;
    let shift = shift as isize;
    let half = SINC_HALF_TAPS as isize;
    // taps[t] weighs source at offset (t - half) from the rounded position
    let span = (half + 1) as f64;
    let taps: Vec<f64> = (-half..=half)
        .map(|t| {
            let x = t as f64 - frac;
            if x.abs() >= span {
                return 0.0;
            }
            let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            let u = PI * x / span;
            let blackman = 0.42 + 0.5 * u.cos() + 0.08 * (2.0 * u).cos();
            sinc * blackman
        })
        .collect();
    for (n, y) in out.iter_mut().enumerate() {
        // continuous position n - delay = (n - shift) - frac
        let center = n as isize - shift + lead as isize;
        let mut acc = 0.0;
        for (t, w) in taps.iter().enumerate() {
            let idx = center - (t as isize - half);
            acc += w * source[idx as usize];
        }
        *y += gain * acc;
    }
}

/// Unit-RMS Gaussian noise through an order-8 Butterworth band-pass
/// (fourth-order high-pass at `low` cascaded with fourth-order low-pass at
/// `high`). A warm-up segment is discarded so the filter starts settled.
fn band_limited_noise(len: usize, low: f64, high: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    const WARMUP: usize = 8192;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..len + WARMUP).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Butterworth pole-pair quality factors for fourth order.
    let qs = [0.541_196_100_146_197, 1.306_562_964_876_377];
    for q in qs {
        Biquad::highpass(low, q, sample_rate).run(&mut x);
    }
    for q in qs {
        Biquad::lowpass(high, q, sample_rate).run(&mut x);
    }
    x.drain(..WARMUP);
    let rms = mean_square(&x).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn design(f0: f64, q: f64, sample_rate: f64, high: bool) -> Self {
        let w0 = 2.0 * PI * f0 / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = if high {
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0]
        } else {
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0]
        };
        Self {
            b: b.map(|v| v / a0),
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(f0: f64, q: f64, sample_rate: f64) -> Self {
        Self::design(f0, q, sample_rate, true)
    }

    fn lowpass(f0: f64, q: f64, sample_rate: f64) -> Self {
        Self::design(f0, q, sample_rate, false)
    }

    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// Adds independent white Gaussian noise to every channel so that
/// `10 log10(signal_power_i / noise_power_i) = snr_db` for each channel,
/// with `signal_power_i` the mean square of the clean channel.
///
/// Returns the noisy series and the realized (measured) noise power per
/// channel. `snr_db = +inf` returns the input unchanged with zero noise.
pub fn add_noise(clean: &TimeSeries, snr_db: f64, seed: u64) -> Result<(TimeSeries, Vec<f64>)> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(invalid(format!("invalid SNR {snr_db} dB")));
    }
    let powers: Vec<f64> = (0..clean.num_channels()).map(|i| clean.power(i)).collect();
    if powers.iter().all(|&p| p == 0.0) {
        return Err(invalid("clean series has no power in any channel"));
    }
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), vec![0.0; clean.num_channels()]));
    }
    if let Some(i) = powers.iter().position(|&p| p == 0.0) {
        return Err(invalid(format!(
            "channel {i} has zero power; a finite SNR cannot be calibrated"
        )));
    }
    let ratio = 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut realized = Vec::with_capacity(powers.len());
    let channels = clean
        .channels()
        .iter()
        .zip(&powers)
        .map(|(ch, &p)| {
            let sigma = (p / ratio).sqrt();
            let mut noise_energy = 0.0;
            let out: Vec<f64> = ch
                .iter()
                .map(|&x| {
                    let n = sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    noise_energy += n * n;
                    x + n
                })
                .collect();
            realized.push(noise_energy / ch.len() as f64);
            out
        })
        .collect();
    Ok((TimeSeries::new(channels, clean.sample_rate())?, realized))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    /// Periodic Hann, `0.5 - 0.5 cos(2 PI n / B)`.
    Hann,
}

impl Window {
    pub fn coefficients(self, block_size: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; block_size],
            Window::Hann => (0..block_size)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / block_size as f64).cos())
                .collect(),
        }
    }

    /// Amplitude scale that makes an on-bin sinusoid of amplitude `A` read
    /// `|Y| = A`: `2 / sum(w)`.
    pub fn amplitude_scale(self, block_size: usize) -> f64 {
        2.0 / self.coefficients(block_size).iter().sum::<f64>()
    }

    /// Variance of one scaled bin per unit variance of white input noise:
    /// `scale^2 * sum(w^2)`.
    pub fn noise_gain(self, block_size: usize) -> f64 {
        let w = self.coefficients(block_size);
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        4.0 * s2 / (s * s)
    }

    /// Ratio of in-bin to broadband SNR for an on-bin tone in white noise,
    /// `sum(w)^2 / (2 sum(w^2))`.
    pub fn tone_processing_gain(self, block_size: usize) -> f64 {
        2.0 / self.noise_gain(block_size)
    }
}

/// Frequency-domain array snapshots at one analysis bin, one complex
/// `M`-vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    blocks: Vec<DVector<C64>>,
    frequency: f64,
    block_size: usize,
    hop: usize,
    sample_rate: f64,
    window: Window,
}

impl SnapshotSet {
    /// Wraps externally produced snapshots (all of equal length).
    pub fn from_blocks(blocks: Vec<DVector<C64>>, frequency: f64) -> Result<Self> {
        if blocks.is_empty() || blocks[0].is_empty() {
            return Err(invalid("need at least one non-empty snapshot"));
        }
        if blocks.iter().any(|b| b.len() != blocks[0].len()) {
            return Err(invalid("snapshots differ in length"));
        }
        Ok(Self {
            blocks,
            frequency,
            block_size: 0,
            hop: 0,
            sample_rate: 0.0,
            window: Window::Rectangular,
        })
    }

    pub fn blocks(&self) -> &[DVector<C64>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn sensors(&self) -> usize {
        self.blocks[0].len()
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Per-bin noise variance produced by white time-domain noise of the
    /// given power.
    pub fn bin_noise_variance(&self, time_domain_power: f64) -> f64 {
        if self.block_size == 0 {
            return time_domain_power;
        }
        time_domain_power * self.window.noise_gain(self.block_size)
    }

    /// Number of statistically independent blocks the average is worth when
    /// blocks overlap: `K / (1 + 2 sum_j (1 - j/K) rho_j)`, with `rho_j` the
    /// normalized window overlap at a lag of `j` hops.
    pub fn effective_block_count(&self) -> f64 {
        let k = self.blocks.len();
        if self.block_size == 0 || self.hop >= self.block_size || k == 1 {
            return k as f64;
        }
        let w = self.window.coefficients(self.block_size);
        let energy: f64 = w.iter().map(|v| v * v).sum();
        let mut inflation = 1.0;
        for j in 1..k {
            let lag = j * self.hop;
            if lag >= self.block_size {
                break;
            }
            let rho: f64 = w[..self.block_size - lag]
                .iter()
                .zip(&w[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / energy;
            inflation += 2.0 * (1.0 - j as f64 / k as f64) * rho;
        }
        k as f64 / inflation
    }
}

/// Hop length for a given overlap fraction.
pub fn hop_length(block_size: usize, overlap: f64) -> usize {
    ((block_size as f64) * (1.0 - overlap)).round().max(1.0) as usize
}

/// DFT bin index of `frequency`, or an error naming the neighbouring bins.
pub fn bin_index(frequency: f64, sample_rate: f64, block_size: usize) -> Result<usize> {
    let exact = frequency * block_size as f64 / sample_rate;
    let nearest = exact.round();
    if (exact - nearest).abs() > 1e-9 * exact.abs().max(1.0) {
        let df = sample_rate / block_size as f64;
        return Err(Error::OffBinFrequency {
            frequency,
            lower: exact.floor() * df,
            upper: exact.ceil() * df,
        });
    }
    let bin = nearest as usize;
    if bin == 0 || 2 * bin > block_size {
        return Err(invalid(format!(
            "{frequency} Hz maps to bin {bin}, outside (0, block_size / 2]"
        )));
    }
    Ok(bin)
}

/// Cuts the record into blocks, windows each block and extracts the DFT bin
/// at `frequency`, scaled so an on-bin sinusoid yields its complex amplitude.
pub fn to_snapshots(
    ts: &TimeSeries,
    block_size: usize,
    frequency: f64,
    window: Window,
    overlap: f64,
) -> Result<SnapshotSet> {
    if block_size == 0 {
        return Err(invalid("block size must be positive"));
    }
    if block_size > ts.len() {
        return Err(Error::BlockTooLong {
            block_size,
            available: ts.len(),
        });
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(invalid(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let bin = bin_index(frequency, ts.sample_rate(), block_size)?;
    let hop = hop_length(block_size, overlap);
    let count = (ts.len() - block_size) / hop + 1;

    let scale = window.amplitude_scale(block_size);
    let kernel: Vec<C64> = window
        .coefficients(block_size)
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let turns = ((bin * n) % block_size) as f64 / block_size as f64;
            C64::from_polar(scale * w, -2.0 * PI * turns)
        })
        .collect();

    let blocks = (0..count)
        .map(|b| {
            let start = b * hop;
            DVector::from_iterator(
                ts.num_channels(),
                ts.channels().iter().map(|ch| {
                    ch[start..start + block_size]
                        .iter()
                        .zip(&kernel)
                        .fold(C64::new(0.0, 0.0), |acc, (x, k)| acc + k * *x)
                }),
            )
        })
        .collect();

    Ok(SnapshotSet {
        blocks,
        frequency,
        block_size,
        hop,
        sample_rate: ts.sample_rate(),
        window,
    })
}

/// Unitary DFT (`1/sqrt(B)` normalization) of a windowed block, so that the
/// summed squared bin magnitudes equal the windowed block energy.
pub fn windowed_spectrum(block: &[f64], window: Window) -> Vec<C64> {
    let w = window.coefficients(block.len());
    let mut buf: Vec<C64> = block.iter().zip(&w).map(|(x, w)| C64::new(x * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(block.len()).process(&mut buf);
    let norm = 1.0 / (block.len() as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= norm);
    buf
}

/// Sample cross-spectral matrix `(1/K) sum_k Y_k Y_k^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectralMatrix {
    entries: DMatrix<C64>,
    block_count: usize,
    frequency: f64,
}

pub fn estimate_csm(snapshots: &SnapshotSet) -> CrossSpectralMatrix {
    let m = snapshots.sensors();
    let k = snapshots.len();
    let mut entries = DMatrix::<C64>::zeros(m, m);
    for y in snapshots.blocks() {
        for i in 0..m {
            for l in i..m {
                entries[(i, l)] += y[i] * y[l].conj();
            }
        }
    }
    for i in 0..m {
        entries[(i, i)] = C64::new(entries[(i, i)].re / k as f64, 0.0);
        for l in i + 1..m {
            let v = entries[(i, l)] / k as f64;
            entries[(i, l)] = v;
            entries[(l, i)] = v.conj();
        }
    }
    CrossSpectralMatrix {
        entries,
        block_count: k,
        frequency: snapshots.frequency(),
    }
}

impl CrossSpectralMatrix {
    /// Wraps a matrix after checking it is square, finite and Hermitian.
    pub fn from_entries(entries: DMatrix<C64>, block_count: usize, frequency: f64) -> Result<Self> {
        if !entries.is_square() || entries.is_empty() {
            return Err(invalid("cross-spectral matrix must be square and non-empty"));
        }
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("cross-spectral matrix has non-finite entries"));
        }
        let scale = entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let m = entries.nrows();
        for i in 0..m {
            for l in i..m {
                if (entries[(i, l)] - entries[(l, i)].conj()).norm() > 1e-12 * scale {
                    return Err(invalid(format!("entry ({i}, {l}) breaks Hermitian symmetry")));
                }
            }
            if entries[(i, i)].re < 0.0 {
                return Err(invalid(format!("diagonal entry {i} is negative")));
            }
        }
        Ok(Self {
            entries,
            block_count: block_count.max(1),
            frequency,
        })
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn sensors(&self) -> usize {
        self.entries.nrows()
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn trace(&self) -> f64 {
        (0..self.sensors()).map(|i| self.entries[(i, i)].re).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self.entries.map(|z| z * factor),
            ..*self
        }
    }
}

/// `vec(R)` with entry `(i, l)` at `i * M + l`, the row order of the lifted
/// steering matrix.
pub fn vectorize_csm(csm: &CrossSpectralMatrix) -> DVector<C64> {
    vectorize_csm_with(csm, CsmEntries::Full)
}

pub fn vectorize_csm_with(csm: &CrossSpectralMatrix, layout: CsmEntries) -> DVector<C64> {
    let pairs = layout.pairs(csm.sensors());
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, l)| csm.entries[(i, l)]))
}

/// Inverse of [`vectorize_csm`].
pub fn devectorize_csm(v: &DVector<C64>) -> Result<DMatrix<C64>> {
    let m = (v.len() as f64).sqrt().round() as usize;
    if m * m != v.len() || m == 0 {
        return Err(invalid(format!("length {} is not a perfect square", v.len())));
    }
    Ok(DMatrix::from_fn(m, m, |i, l| v[i * m + l]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{spiral_array, subsample_sensors};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one_sensor_at(p: Position) -> ArrayGeometry {
        ArrayGeometry::new(vec![p]).unwrap()
    }

    #[test]
    fn unit_tone_delayed_by_propagation() {
        let geo = one_sensor_at(Position::new(0.0, 0.0, 1.0));
        let scene = SourceScene::new(vec![Source::tone(Position::zeros(), 1000.0, 4.0 * PI)]).unwrap();
        let fs = 48_000.0;
        let ts = synthesize(&scene, &geo, fs, 0.01, 343.0, 0).unwrap();
        for (n, y) in ts.channel(0).iter().enumerate() {
            let t = n as f64 / fs - 1.0 / 343.0;
            assert!((y - (2.0 * PI * 1000.0 * t).cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn equidistant_channels_are_identical() {
        let geo = ArrayGeometry::new(vec![Position::new(0.2, 0.0, 0.0), Position::new(-0.2, 0.0, 0.0)]).unwrap();
        let scene = SourceScene::new(vec![
            Source::tone(Position::new(0.0, 0.1, 1.0), 3000.0, 1.0),
            Source::broadband(Position::new(0.0, -0.3, 0.9), 500.0, 6000.0, 1.0, 7),
        ])
        .unwrap();
        let ts = synthesize(&scene, &geo, 48_000.0, 0.05, 343.0, 0).unwrap();
        assert_eq!(ts.channel(0), ts.channel(1));
    }

    #[test]
    fn tone_power_matches_closed_form() {
        let geo = one_sensor_at(Position::new(0.0, 0.0, 1.0));
        let amp = 2.5;
        let scene = SourceScene::new(vec![Source::tone(Position::zeros(), 5000.0, amp)]).unwrap();
        // 0.1 s = 500 whole periods
        let ts = synthesize(&scene, &geo, 48_000.0, 0.1, 343.0, 0).unwrap();
        let expect = amp * amp / (2.0 * (4.0 * PI).powi(2));
        assert_relative_eq!(ts.power(0), expect, max_relative = 0.01);
    }

    #[test]
    fn nyquist_and_geometry_are_checked() {
        let geo = one_sensor_at(Position::new(0.0, 0.0, 1.0));
        let scene = SourceScene::new(vec![Source::tone(Position::zeros(), 5000.0, 1.0)]).unwrap();
        assert!(matches!(
            synthesize(&scene, &geo, 10_000.0, 0.1, 343.0, 0),
            Err(Error::NyquistViolation { .. })
        ));
        let on_top = SourceScene::new(vec![Source::tone(Position::new(0.0, 0.0, 1.0), 50.0, 1.0)]).unwrap();
        assert!(matches!(
            synthesize(&on_top, &geo, 1000.0, 0.1, 343.0, 0),
            Err(Error::DegenerateGeometry { .. })
        ));
        assert!(synthesize(&scene, &geo, 48_000.0, 0.0, 343.0, 0).is_err());
    }

    #[test]
    fn broadband_fractional_delay_is_accurate() {
        // Two sensors whose delays differ by about half a sample: the refined
        // cross-correlation peak must land on the true delay difference.
        let fs = 48_000.0;
        let c = 343.0;
        let src = Position::zeros();
        let geo = ArrayGeometry::new(vec![Position::new(0.0, 0.0, 1.0), Position::new(0.0, 0.0, 1.00357)]).unwrap();
        let scene = SourceScene::new(vec![Source::broadband(src, 1000.0, 4000.0, 1.0, 3)]).unwrap();
        let ts = synthesize(&scene, &geo, fs, 0.2, c, 0).unwrap();
        let a: Vec<f64> = ts.channel(0).iter().map(|v| v * 4.0 * PI * 1.0).collect();
        let b: Vec<f64> = ts.channel(1).iter().map(|v| v * 4.0 * PI * 1.00357).collect();
        let lag_true = 0.00357 / c * fs;
        let xc = |lag: isize| -> f64 {
            (200..a.len() - 200)
                .map(|n| a[n] * b[(n as isize + lag) as usize])
                .sum()
        };
        let (l0, l1, l2) = (xc(-1), xc(0), xc(1));
        let peak = 0.5 * (l0 - l2) / (l0 - 2.0 * l1 + l2);
        assert!((peak - lag_true).abs() < 0.05, "{peak} vs {lag_true}");
    }

    fn tone_series(len: usize, fs: f64, f: f64, amp: f64) -> TimeSeries {
        let ch = (0..len).map(|n| amp * (2.0 * PI * f * n as f64 / fs + 0.3).cos()).collect();
        TimeSeries::new(vec![ch], fs).unwrap()
    }

    #[test]
    fn infinite_snr_adds_nothing() {
        let ts = tone_series(1000, 8000.0, 1000.0, 1.0);
        let (noisy, p) = add_noise(&ts, f64::INFINITY, 1).unwrap();
        assert_eq!(noisy, ts);
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn noise_power_tracks_snr() {
        let ts = tone_series(200_000, 48_000.0, 5000.0, 1.0);
        let clean = ts.power(0);
        let (_, p0) = add_noise(&ts, 0.0, 11).unwrap();
        assert_relative_eq!(p0[0], clean, max_relative = 0.05);
        let (_, p10) = add_noise(&ts, -10.0, 12).unwrap();
        assert_relative_eq!(p10[0], 10.0 * clean, max_relative = 0.05);
    }

    #[test]
    fn noise_is_seeded() {
        let ts = tone_series(5000, 48_000.0, 5000.0, 1.0);
        let a = add_noise(&ts, 3.0, 5).unwrap();
        let b = add_noise(&ts, 3.0, 5).unwrap();
        assert_eq!(a, b);
        let c = add_noise(&ts, 3.0, 6).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_channel_cannot_be_calibrated() {
        let ts = TimeSeries::new(vec![vec![1.0, -1.0], vec![0.0, 0.0]], 10.0).unwrap();
        assert!(add_noise(&ts, 0.0, 1).is_err());
        assert!(add_noise(&ts, f64::INFINITY, 1).is_ok());
        let silent = TimeSeries::new(vec![vec![0.0; 4]], 10.0).unwrap();
        assert!(add_noise(&silent, f64::INFINITY, 1).is_err());
    }

    #[test]
    fn on_bin_tone_reads_its_amplitude() {
        let fs = 48_000.0;
        let ts = tone_series(4800, fs, 5000.0, 1.0);
        let snaps = to_snapshots(&ts, 4800, 5000.0, Window::Rectangular, 0.5).unwrap();
        assert_eq!(snaps.len(), 1);
        assert!((snaps.blocks()[0][0].norm() - 1.0).abs() < 1e-9);
        assert!((snaps.blocks()[0][0].arg() - 0.3).abs() < 1e-9);

        let ts = tone_series(9600, fs, 5000.0, 0.7);
        let snaps = to_snapshots(&ts, 4800, 5000.0, Window::Hann, 0.5).unwrap();
        assert_eq!(snaps.len(), 3);
        for b in snaps.blocks() {
            assert!((b[0].norm() - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_signal_gives_zero_snapshots() {
        let ts = TimeSeries::new(vec![vec![0.0; 1000]; 3], 1000.0).unwrap();
        let snaps = to_snapshots(&ts, 100, 100.0, Window::Hann, 0.25).unwrap();
        assert!(snaps.blocks().iter().all(|b| b.iter().all(|z| *z == C64::new(0.0, 0.0))));
    }

    #[test]
    fn block_count_and_stationarity() {
        let fs = 48_000.0;
        let len = 96_000;
        let ts = tone_series(len, fs, 5000.0, 1.0);
        let snaps = to_snapshots(&ts, 4800, 5000.0, Window::Rectangular, 0.5).unwrap();
        assert_eq!(snaps.hop(), 2400);
        assert_eq!(snaps.len(), (len - 4800) / 2400 + 1);
        let first = snaps.blocks()[0][0].norm();
        for b in snaps.blocks() {
            assert_relative_eq!(b[0].norm(), first, max_relative = 1e-9);
        }
    }

    #[test]
    fn off_bin_and_long_blocks_are_rejected() {
        let ts = tone_series(1000, 48_000.0, 5000.0, 1.0);
        match to_snapshots(&ts, 480, 5050.0, Window::Rectangular, 0.0) {
            Err(Error::OffBinFrequency { lower, upper, .. }) => {
                assert_eq!((lower, upper), (5000.0, 5100.0));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            to_snapshots(&ts, 2000, 4800.0, Window::Rectangular, 0.0),
            Err(Error::BlockTooLong { .. })
        ));
    }

    #[test]
    fn single_bin_matches_fft() {
        let fs = 1000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch: Vec<f64> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ts = TimeSeries::new(vec![ch.clone()], fs).unwrap();
        for window in [Window::Rectangular, Window::Hann] {
            let spec = windowed_spectrum(&ch, window);
            let snaps = to_snapshots(&ts, 256, 1000.0 * 37.0 / 256.0, window, 0.0).unwrap();
            let scale = window.amplitude_scale(256) * 16.0;
            assert_relative_eq!((snaps.blocks()[0][0] - spec[37] * scale).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_outer_product() {
        let y = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let csm = estimate_csm(&SnapshotSet::from_blocks(vec![y], 100.0).unwrap());
        let e = csm.entries();
        assert_eq!(e[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(e[(0, 1)], C64::new(0.0, -1.0));
        assert_eq!(e[(1, 0)], C64::new(0.0, 1.0));
        assert_eq!(e[(1, 1)], C64::new(1.0, 0.0));
        let v = vectorize_csm(&csm);
        assert_eq!(
            v.as_slice(),
            &[C64::new(1.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)]
        );
        assert_eq!(&devectorize_csm(&v).unwrap(), e);
        let ident = CrossSpectralMatrix::from_entries(DMatrix::identity(2, 2), 1, 1.0).unwrap();
        let v = vectorize_csm(&ident);
        assert_eq!(v.map(|z| z.re).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn uncorrelated_noise_csm_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 4;
        let blocks: Vec<DVector<C64>> = (0..10_000)
            .map(|_| {
                DVector::from_fn(m, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im) / 2f64.sqrt()
                })
            })
            .collect();
        let csm = estimate_csm(&SnapshotSet::from_blocks(blocks, 1.0).unwrap());
        for i in 0..m {
            assert!((csm.entries()[(i, i)].re - 1.0).abs() < 0.05);
            for l in 0..m {
                if i != l {
                    assert!(csm.entries()[(i, l)].norm() < 0.05);
                }
            }
        }
    }

    #[test]
    fn noiseless_single_source_csm_is_rank_one() {
        let geo = subsample_sensors(&spiral_array(56, 7, 0.5).unwrap(), 10, 42).unwrap();
        let scene = SourceScene::new(vec![Source::tone(Position::new(0.0, 0.0, 1.0), 5000.0, 1.0)]).unwrap();
        let ts = synthesize(&scene, &geo, 48_000.0, 0.5, 343.0, 0).unwrap();
        let snaps = to_snapshots(&ts, 4800, 5000.0, Window::Rectangular, 0.5).unwrap();
        let csm = estimate_csm(&snaps);
        let eig = nalgebra::SymmetricEigen::new(csm.entries().clone()).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!(ev[1] < 1e-8 * ev[0], "{ev:?}");
        assert!(ev[9] >= -1e-10 * csm.trace());
    }

    #[test]
    fn overlap_reduces_effective_blocks() {
        let ts = tone_series(48_000, 48_000.0, 5000.0, 1.0);
        let rect = to_snapshots(&ts, 4800, 5000.0, Window::Rectangular, 0.5).unwrap();
        let k = rect.len() as f64;
        // adjacent rectangular blocks at 50% overlap are correlated by 1/2
        let expect = k / (1.0 + 2.0 * (1.0 - 1.0 / k) * 0.5);
        assert_relative_eq!(rect.effective_block_count(), expect, max_relative = 1e-12);
        let disjoint = to_snapshots(&ts, 4800, 5000.0, Window::Rectangular, 0.0).unwrap();
        assert_eq!(disjoint.effective_block_count(), disjoint.len() as f64);
        assert_relative_eq!(Window::Rectangular.tone_processing_gain(4800), 2400.0, max_relative = 1e-12);
        assert_relative_eq!(Window::Hann.tone_processing_gain(4800), 1600.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn parseval_on_random_blocks(seed in 0u64..1000, len in 8usize..300, hann in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let window = if hann { Window::Hann } else { Window::Rectangular };
            let spec = windowed_spectrum(&block, window);
            let w = window.coefficients(len);
            let energy: f64 = block.iter().zip(&w).map(|(x, w)| (x * w).powi(2)).sum();
            let bins: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((bins - energy).abs() <= 1e-6 * energy);
        }

        #[test]
        fn csm_is_hermitian_psd(seed in 0u64..500, m in 1usize..6, k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<DVector<C64>> = (0..k)
                .map(|_| DVector::from_fn(m, |_, _| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))))
                .collect();
            let csm = estimate_csm(&SnapshotSet::from_blocks(blocks, 1.0).unwrap());
            let e = csm.entries();
            for i in 0..m {
                prop_assert!(e[(i, i)].im == 0.0 && e[(i, i)].re >= 0.0);
                for l in 0..m {
                    prop_assert_eq!(e[(i, l)], e[(l, i)].conj());
                }
            }
            let ev = nalgebra::SymmetricEigen::new(e.clone()).eigenvalues;
            prop_assert!(ev.min() >= -1e-10 * csm.trace());
            let v = vectorize_csm(&csm);
            prop_assert_eq!(&devectorize_csm(&v).unwrap(), e);
        }
    }
}
