//! Toy parametric ECG model: a seeded spike-train generator, a threshold
//! beat detector with spectral and baseline features, and the rule table
//! that maps features to a diagnosis branch.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gaussian width of one synthesized beat, seconds.
pub const PULSE_SIGMA_S: f64 = 0.025;
pub const MIN_SAMPLE_RATE_HZ: f64 = 50.0;

const SPECTRUM_LOW_HZ: f64 = 0.5;
const SPECTRUM_HIGH_HZ: f64 = 10.0;
const SPECTRUM_STEP_HZ: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcgError {
    #[error("fewer than two beats detected")]
    NoBeatsDetected,
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("empty parameter grid")]
    EmptyParameterGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    /// Beats per minute.
    pub bpm: f64,
    /// Relative per-beat interval jitter in `[0, 1]`.
    #[serde(default)]
    pub irregularity: f64,
    /// Baseline level between beats.
    #[serde(default)]
    pub st_offset: f64,
    /// Standard deviation of additive noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthParams {
    pub fn regular(bpm: f64) -> Self {
        SynthParams {
            bpm,
            irregularity: 0.0,
            st_offset: 0.0,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<(), EcgError> {
        if !(self.bpm.is_finite() && self.bpm > 0.0) {
            return Err(EcgError::InvalidParams(format!("bpm {} must be positive", self.bpm)));
        }
        if !(0.0..=1.0).contains(&self.irregularity) {
            return Err(EcgError::InvalidParams(format!(
                "irregularity {} outside [0, 1]",
                self.irregularity
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) || !self.st_offset.is_finite() {
            return Err(EcgError::InvalidParams(
                "noise must be >= 0 and st_offset finite".into(),
            ));
        }
        Ok(())
    }
}

/// Named patient presets shipped with the example application.
pub fn preset(name: &str) -> Option<SynthParams> {
    let p = |bpm, irregularity, st_offset| SynthParams {
        bpm,
        irregularity,
        st_offset,
        noise: 0.02,
        seed: 7,
    };
    Some(match name {
        "normal" => p(72.0, 0.0, 0.0),
        "arrhythmia" => p(75.0, 0.6, 0.0),
        "ischemia" => p(66.0, 0.0, 0.3),
        "fibrillation" => p(330.0, 0.15, 0.0),
        _ => return None,
    })
}

pub const PRESETS: [&str; 4] = ["normal", "arrhythmia", "ischemia", "fibrillation"];

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub rate: f64,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

/// Beat instants: the first at half a base interval, then intervals of
/// `60/bpm * (1 + irregularity * (u - 0.5))` with seeded uniform `u`.
pub fn beat_times(params: &SynthParams, duration: f64) -> Vec<f64> {
    let base = 60.0 / params.bpm;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut times = Vec::new();
    let mut t = 0.5 * base;
    while t < duration {
        times.push(t);
        let jitter = if params.irregularity > 0.0 {
            params.irregularity * (rng.random::<f64>() - 0.5)
        } else {
            0.0
        };
        t += base * (1.0 + jitter);
    }
    times
}

pub fn synthesize_ecg(params: &SynthParams, duration: f64, rate: f64) -> Result<Signal, EcgError> {
    params.check()?;
    if !(rate.is_finite() && rate >= MIN_SAMPLE_RATE_HZ) {
        return Err(EcgError::InvalidParams(format!(
            "sample rate {rate} below {MIN_SAMPLE_RATE_HZ} Hz"
        )));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(EcgError::InvalidParams(format!("duration {duration} must be positive")));
    }
    let n = (duration * rate).round() as usize;
    let mut samples = vec![params.st_offset; n];
    let reach = 6.0 * PULSE_SIGMA_S;
    for beat in beat_times(params, duration) {
        let lo = ((beat - reach) * rate).floor().max(0.0) as usize;
        let hi = (((beat + reach) * rate).ceil() as usize).min(n.saturating_sub(1));
        for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = i as f64 / rate - beat;
            *s += (-0.5 * (d / PULSE_SIGMA_S).powi(2)).exp();
        }
    }
    if params.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x05EE_D0FA_015E);
        for s in &mut samples {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += params.noise * z;
        }
    }
    Ok(Signal { rate, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcgFeatures {
    /// Mean beat-to-beat interval, seconds.
    pub rr_mean: f64,
    /// Population standard deviation of the intervals, seconds.
    pub rr_std: f64,
    pub dominant_freq: f64,
    pub st_deviation: f64,
}

impl EcgFeatures {
    fn as_array(&self) -> [f64; 4] {
        [self.rr_mean, self.rr_std, self.dominant_freq, self.st_deviation]
    }
}

/// Peak sample index of every excursion above half the signal maximum.
pub fn detect_beats(signal: &Signal) -> Vec<usize> {
    let max = signal.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max.is_finite() && max > 0.0) {
        return Vec::new();
    }
    let threshold = 0.5 * max;
    let mut peaks = Vec::new();
    let mut run: Option<usize> = None;
    for (i, &x) in signal.samples.iter().enumerate() {
        if x > threshold {
            run = Some(match run {
                Some(p) if signal.samples[p] >= x => p,
                _ => i,
            });
        } else if let Some(p) = run.take() {
            peaks.push(p);
        }
    }
    peaks.extend(run);
    peaks
}

/// Magnitude of the signal's Fourier sum at one frequency.
fn spectral_magnitude(centered: &[f64], rate: f64, freq: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &x) in centered.iter().enumerate() {
        let phase = TAU * freq * i as f64 / rate;
        re += x * phase.cos();
        im -= x * phase.sin();
    }
    re.hypot(im)
}

pub fn extract_features(signal: &Signal) -> Result<EcgFeatures, EcgError> {
    let peaks = detect_beats(signal);
    if peaks.len() < 2 {
        return Err(EcgError::NoBeatsDetected);
    }
    let rate = signal.rate;
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / rate).collect();
    let rr_mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let rr_std = (rr.iter().map(|x| (x - rr_mean).powi(2)).sum::<f64>() / rr.len() as f64).sqrt();

    let mean = signal.samples.iter().sum::<f64>() / signal.samples.len() as f64;
    let centered: Vec<f64> = signal.samples.iter().map(|x| x - mean).collect();
    let steps = ((SPECTRUM_HIGH_HZ - SPECTRUM_LOW_HZ) / SPECTRUM_STEP_HZ).round() as usize;
    let mut dominant_freq = SPECTRUM_LOW_HZ;
    let mut best = f64::NEG_INFINITY;
    for k in 0..=steps {
        let f = SPECTRUM_LOW_HZ + k as f64 * SPECTRUM_STEP_HZ;
        let m = spectral_magnitude(&centered, rate, f);
        if m > best {
            best = m;
            dominant_freq = f;
        }
    }

    // Baseline: samples clear of every detected beat.
    let exclusion = ((0.4 * rr_mean).min(4.0 * PULSE_SIGMA_S) * rate).round() as usize;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut next_peak = 0usize;
    for (i, &x) in signal.samples.iter().enumerate() {
        while next_peak + 1 < peaks.len() && peaks[next_peak + 1] <= i {
            next_peak += 1;
        }
        let near = |p: usize| p.abs_diff(i) <= exclusion;
        let close = near(peaks[next_peak]) || peaks.get(next_peak + 1).is_some_and(|&p| near(p));
        if !close {
            sum += x;
            count += 1;
        }
    }
    let st_deviation = if count > 0 {
        sum / count as f64
    } else {
        let mids: Vec<f64> = peaks.windows(2).map(|w| signal.samples[(w[0] + w[1]) / 2]).collect();
        mids.iter().sum::<f64>() / mids.len() as f64
    };

    Ok(EcgFeatures {
        rr_mean,
        rr_std,
        dominant_freq,
        st_deviation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "Thresholds::default_fibrillation")]
    pub fibrillation_hz: f64,
    #[serde(default = "Thresholds::default_ischemia")]
    pub ischemia_st: f64,
    /// Limit on `rr_std / rr_mean`.
    #[serde(default = "Thresholds::default_arrhythmia")]
    pub arrhythmia_cv: f64,
}

impl Thresholds {
    fn default_fibrillation() -> f64 {
        4.0
    }
    fn default_ischemia() -> f64 {
        0.15
    }
    fn default_arrhythmia() -> f64 {
        0.12
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            fibrillation_hz: Self::default_fibrillation(),
            ischemia_st: Self::default_ischemia(),
            arrhythmia_cv: Self::default_arrhythmia(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Arrhythmia,
    Fibrillation,
    Ischemia,
    Normal,
}

impl Diagnosis {
    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Arrhythmia => "arrhythmia",
            Diagnosis::Fibrillation => "fibrillation",
            Diagnosis::Ischemia => "ischemia",
            Diagnosis::Normal => "normal",
        }
    }

    /// Whether the branch calls for the simulation loop.
    pub fn needs_simulation(self) -> bool {
        matches!(self, Diagnosis::Fibrillation | Diagnosis::Ischemia)
    }
}

/// First matching rule wins: fibrillation, ischemia, arrhythmia, else normal.
pub fn estimate_disease(features: &EcgFeatures, thresholds: &Thresholds) -> Diagnosis {
    if features.dominant_freq > thresholds.fibrillation_hz {
        Diagnosis::Fibrillation
    } else if features.st_deviation.abs() > thresholds.ischemia_st {
        Diagnosis::Ischemia
    } else if features.rr_mean > 0.0 && features.rr_std / features.rr_mean > thresholds.arrhythmia_cv {
        Diagnosis::Arrhythmia
    } else {
        Diagnosis::Normal
    }
}

/// Euclidean distance between feature vectors, each coordinate scaled by
/// the patient's value (or 1 where that value is zero).
pub fn feature_distance(candidate: &EcgFeatures, patient: &EcgFeatures) -> f64 {
    candidate
        .as_array()
        .iter()
        .zip(patient.as_array())
        .map(|(c, p)| {
            let scale = if p.abs() > 1e-9 { p.abs() } else { 1.0 };
            ((c - p) / scale).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Signal length and rate used for both the patient and VHS candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub duration: f64,
    pub rate: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            duration: 20.0,
            rate: 250.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VhsSettings {
    pub max_iter: u32,
    pub tolerance: f64,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VhsOutcome {
    /// Zero-based position of the best candidate in the grid.
    pub best_index: usize,
    pub best_params: SynthParams,
    pub best_distance: f64,
    pub iterations: u32,
    pub distances: Vec<f64>,
    pub converged: bool,
}

/// Walks the candidate grid in order. Every iteration first calls
/// `simulate(iteration)` (the grid dispatch of one simulation run), then
/// scores the candidate against the patient features. Stops at the first
/// candidate within `tolerance`, after `max_iter` iterations, or at the end
/// of the grid.
pub fn run_vhs_loop<E: From<EcgError>>(
    patient: &EcgFeatures,
    grid: &[SynthParams],
    settings: &VhsSettings,
    mut simulate: impl FnMut(u32) -> Result<(), E>,
) -> Result<VhsOutcome, E> {
    if grid.is_empty() {
        return Err(EcgError::EmptyParameterGrid.into());
    }
    let limit = (settings.max_iter.max(1) as usize).min(grid.len());
    let mut distances = Vec::with_capacity(limit);
    let mut best: Option<(usize, f64)> = None;
    let mut converged = false;
    for (i, candidate) in grid.iter().take(limit).enumerate() {
        simulate(i as u32 + 1)?;
        let signal = synthesize_ecg(candidate, settings.signal.duration, settings.signal.rate)?;
        let distance = match extract_features(&signal) {
            Ok(f) => feature_distance(&f, patient),
            Err(EcgError::NoBeatsDetected) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        distances.push(distance);
        if best.is_none_or(|(_, d)| distance < d) {
            best = Some((i, distance));
        }
        if distance <= settings.tolerance {
            converged = true;
            break;
        }
    }
    let (best_index, best_distance) = best.expect("at least one iteration");
    Ok(VhsOutcome {
        best_index,
        best_params: grid[best_index].clone(),
        best_distance,
        iterations: distances.len() as u32,
        distances,
        converged,
    })
}
