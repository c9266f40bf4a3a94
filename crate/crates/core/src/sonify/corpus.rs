use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlannerScalar;
use serde::{Deserialize, Serialize};

use super::SonifyError;
use crate::rng::SimRng;

pub const DEFAULT_GRAIN_MS: f64 = 80.0;
pub const DEFAULT_HOP_MS: f64 = 20.0;

/// Perceptual descriptors of one grain, also used as a selection target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub rms: f64,
    /// Hz.
    pub centroid: f64,
    pub flatness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorWeights {
    pub rms: f64,
    pub centroid: f64,
    pub flatness: f64,
}

impl Default for DescriptorWeights {
    fn default() -> Self {
        Self {
            rms: 1.0,
            centroid: 1.0,
            flatness: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grain {
    pub offset: usize,
    pub length: usize,
    #[serde(flatten)]
    pub descriptor: Descriptor,
}

/// Source signal cut into analysed grains. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainCorpus {
    sample_rate: u32,
    samples: Vec<f32>,
    grains: Vec<Grain>,
    spread: [f64; 3],
}

impl GrainCorpus {
    /// Corpus from precomputed grains. Every grain window must lie within `samples`.
    pub fn new(sample_rate: u32, samples: Vec<f32>, grains: Vec<Grain>) -> Result<Self, SonifyError> {
        if sample_rate == 0 {
            return Err(SonifyError::Config("sample rate must be positive".into()));
        }
        for (i, g) in grains.iter().enumerate() {
            if g.length == 0 || g.offset + g.length > samples.len() {
                return Err(SonifyError::Config(format!("grain {i} window lies outside the signal")));
            }
            let d = g.descriptor;
            if !(d.rms.is_finite() && d.centroid.is_finite() && d.flatness.is_finite()) {
                return Err(SonifyError::Config(format!("grain {i} has non-finite descriptors")));
            }
        }
        let spread = spread(&grains);
        Ok(Self {
            sample_rate,
            samples,
            grains,
            spread,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn grains(&self) -> &[Grain] {
        &self.grains
    }

    pub fn len(&self) -> usize {
        self.grains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grains.is_empty()
    }

    pub fn grain_samples(&self, index: usize) -> &[f32] {
        let g = &self.grains[index];
        &self.samples[g.offset..g.offset + g.length]
    }

    pub fn max_rms(&self) -> f64 {
        self.grains.iter().map(|g| g.descriptor.rms).fold(0.0, f64::max)
    }

    /// Index of the grain nearest to `target` in z-scored descriptor space.
    /// Ties go to the lowest index. The corpus must not be empty.
    pub fn select_grain(&self, target: &Descriptor, weights: &DescriptorWeights) -> usize {
        let t = as_array(target);
        let w = [weights.rms, weights.centroid, weights.flatness];
        let mut best = (0, f64::INFINITY);
        for (i, g) in self.grains.iter().enumerate() {
            let d = as_array(&g.descriptor);
            let dist: f64 = (0..3)
                .map(|k| {
                    let z = (d[k] - t[k]) / self.spread[k];
                    w[k] * z * z
                })
                .sum();
            if dist < best.1 {
                best = (i, dist);
            }
        }
        best.0
    }
}

fn as_array(d: &Descriptor) -> [f64; 3] {
    [d.rms, d.centroid, d.flatness]
}

/// Per-descriptor standard deviation; a zero deviation becomes 1.
fn spread(grains: &[Grain]) -> [f64; 3] {
    let n = grains.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for g in grains {
        let d = as_array(&g.descriptor);
        for k in 0..3 {
            mean[k] += d[k] / n;
        }
    }
    let mut spread = [0.0; 3];
    for g in grains {
        let d = as_array(&g.descriptor);
        for k in 0..3 {
            spread[k] += (d[k] - mean[k]).powi(2) / n;
        }
    }
    for s in &mut spread {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    spread
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Reusable analyser for grains of a fixed length.
pub struct GrainAnalyzer {
    sample_rate: f64,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    buffer: Vec<Complex<f64>>,
}

impl GrainAnalyzer {
    pub fn new(length: usize, sample_rate: u32) -> Self {
        let fft = FftPlannerScalar::new().plan_fft_forward(length);
        Self {
            sample_rate: f64::from(sample_rate),
            window: hann(length),
            fft,
            buffer: vec![Complex::default(); length],
        }
    }

    /// RMS (unwindowed), spectral centroid and spectral flatness of the
    /// Hann-windowed grain over the non-negative frequency bins.
    pub fn analyze(&mut self, grain: &[f32]) -> Descriptor {
        let n = self.window.len();
        debug_assert_eq!(grain.len(), n);
        let rms = (grain.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>() / n as f64).sqrt();
        for ((b, &x), &w) in self.buffer.iter_mut().zip(grain).zip(&self.window) {
            *b = Complex::new(f64::from(x) * w, 0.0);
        }
        self.fft.process(&mut self.buffer);
        let bins = n / 2 + 1;
        let bin_hz = self.sample_rate / n as f64;
        let mut sum_mag = 0.0;
        let mut weighted = 0.0;
        let mut sum_log = 0.0;
        for (k, c) in self.buffer[..bins].iter().enumerate() {
            let mag = c.norm();
            sum_mag += mag;
            weighted += mag * k as f64 * bin_hz;
            sum_log += libm::log(mag.max(1e-12));
        }
        let (centroid, flatness) = if sum_mag > 0.0 {
            let arith = sum_mag / bins as f64;
            let geo = libm::exp(sum_log / bins as f64);
            (weighted / sum_mag, (geo / arith).clamp(0.0, 1.0))
        } else {
            (0.0, 0.0)
        };
        Descriptor {
            rms: rms.min(1.0),
            centroid,
            flatness,
        }
    }
}

/// Cuts `signal` into sliding grains of `grain_ms`, `hop_ms` apart, and analyses each one.
pub fn ingest_corpus(signal: &[f32], sample_rate: u32, grain_ms: f64, hop_ms: f64) -> Result<GrainCorpus, SonifyError> {
    if sample_rate == 0 {
        return Err(SonifyError::Ingest("sample rate must be positive".into()));
    }
    if !(grain_ms >= 5.0 && grain_ms.is_finite()) {
        return Err(SonifyError::Ingest(format!("grain length must be at least 5 ms, got {grain_ms}")));
    }
    if !(hop_ms > 0.0 && hop_ms.is_finite()) {
        return Err(SonifyError::Ingest(format!("hop must be positive, got {hop_ms}")));
    }
    let ms_to_samples = |ms: f64| libm::round(ms * f64::from(sample_rate) / 1000.0) as usize;
    let length = ms_to_samples(grain_ms).max(1);
    let hop = ms_to_samples(hop_ms).max(1);
    if signal.len() < length {
        return Err(SonifyError::Ingest(format!(
            "signal has {} samples, shorter than one {length}-sample grain",
            signal.len()
        )));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(SonifyError::Ingest("signal contains non-finite samples".into()));
    }
    let samples: Vec<f32> = signal.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let mut analyzer = GrainAnalyzer::new(length, sample_rate);
    let grains = (0..=(samples.len() - length) / hop)
        .map(|k| {
            let offset = k * hop;
            Grain {
                offset,
                length,
                descriptor: analyzer.analyze(&samples[offset..offset + length]),
            }
        })
        .collect();
    GrainCorpus::new(sample_rate, samples, grains)
}

/// Synthetic crackle: decaying noise bursts of random brightness over a low
/// rumble bed. Stands in for a field recording in tests and demos.
pub fn synthetic_crackle(sample_rate: u32, seconds: f64, seed: u64) -> Vec<f32> {
    let n = (seconds * f64::from(sample_rate)).ceil() as usize;
    let mut rng = SimRng::seed_from(seed);
    let mut out = vec![0.0f64; n];
    let mut rumble = 0.0;
    for x in out.iter_mut() {
        rumble = 0.995 * rumble + 0.005 * (rng.unit_f64() * 2.0 - 1.0);
        *x = 0.6 * rumble;
    }
    let bursts = (seconds * 40.0).ceil() as usize;
    for _ in 0..bursts {
        let start = rng.below(n.max(1) as u64) as usize;
        let amp = 0.05 + 0.9 * rng.unit_f64().powi(3);
        let decay = libm::exp(-1.0 / (f64::from(sample_rate) * (0.002 + 0.03 * rng.unit_f64())));
        // Two-pole lowpass; the coefficient sets the burst's brightness.
        let smooth = 0.01 + 0.5 * rng.unit_f64().powi(2);
        let (mut env, mut lp1, mut lp2) = (amp, 0.0, 0.0);
        for x in out.iter_mut().skip(start) {
            if env < 1e-4 {
                break;
            }
            lp1 += smooth * ((rng.unit_f64() * 2.0 - 1.0) - lp1);
            lp2 += smooth * (lp1 - lp2);
            *x += env * lp2 / smooth.sqrt();
            env *= decay;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 { 0.9 / peak } else { 0.0 };
    out.into_iter().map(|x| (x * scale) as f32).collect()
}
