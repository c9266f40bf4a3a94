use serde::{Deserialize, Serialize};

use super::corpus::{Descriptor, DescriptorWeights, GrainCorpus};
use super::SonifyError;
use crate::event::CascadeEvent;
use crate::kv::KvConfig;
use crate::rng::SimRng;

/// Event-to-grain mapping parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingConfig {
    /// Amplitude law: `clamp(gain * log10(1 + slips), 0, 1)`.
    pub gain: f64,
    /// Most grains scheduled for one relaxation step.
    pub density_cap: usize,
    /// Target centroid of an event's first step, Hz.
    pub centroid_hi: f64,
    /// Target centroid reached after `sweep_steps` steps, Hz.
    pub centroid_lo: f64,
    pub sweep_steps: u32,
    /// Spacing between consecutive events.
    pub tick_seconds: f64,
    /// Time slot of one relaxation step.
    pub step_seconds: f64,
    pub target_flatness: f64,
    pub weights: DescriptorWeights,
    /// Pitch drop across the centroid sweep, in octaves.
    pub pitch_bend_octaves: f64,
    /// Shortest schedule produced, seconds.
    pub min_duration: f64,
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            gain: 0.5,
            density_cap: 8,
            centroid_hi: 2500.0,
            centroid_lo: 300.0,
            sweep_steps: 20,
            tick_seconds: 0.05,
            step_seconds: 0.01,
            target_flatness: 0.5,
            weights: DescriptorWeights::default(),
            pitch_bend_octaves: 0.0,
            min_duration: 1.0,
            seed: 0,
        }
    }
}

pub const MAPPING_KEYS: &[&str] = &[
    "gain",
    "density_cap",
    "centroid_hi",
    "centroid_lo",
    "sweep_steps",
    "tick_seconds",
    "step_seconds",
    "target_flatness",
    "weight_rms",
    "weight_centroid",
    "weight_flatness",
    "pitch_bend_octaves",
    "min_duration",
    "seed",
];

impl MappingConfig {
    /// Reads the keys in [`MAPPING_KEYS`]; missing keys keep their defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, SonifyError> {
        kv.reject_unknown(MAPPING_KEYS, &[])?;
        let d = Self::default();
        let cfg = Self {
            gain: kv.get_or("gain", d.gain)?,
            density_cap: kv.get_or("density_cap", d.density_cap)?,
            centroid_hi: kv.get_or("centroid_hi", d.centroid_hi)?,
            centroid_lo: kv.get_or("centroid_lo", d.centroid_lo)?,
            sweep_steps: kv.get_or("sweep_steps", d.sweep_steps)?,
            tick_seconds: kv.get_or("tick_seconds", d.tick_seconds)?,
            step_seconds: kv.get_or("step_seconds", d.step_seconds)?,
            target_flatness: kv.get_or("target_flatness", d.target_flatness)?,
            weights: DescriptorWeights {
                rms: kv.get_or("weight_rms", d.weights.rms)?,
                centroid: kv.get_or("weight_centroid", d.weights.centroid)?,
                flatness: kv.get_or("weight_flatness", d.weights.flatness)?,
            },
            pitch_bend_octaves: kv.get_or("pitch_bend_octaves", d.pitch_bend_octaves)?,
            min_duration: kv.get_or("min_duration", d.min_duration)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SonifyError> {
        let positive = [
            ("gain", self.gain),
            ("centroid_hi", self.centroid_hi),
            ("centroid_lo", self.centroid_lo),
            ("tick_seconds", self.tick_seconds),
            ("step_seconds", self.step_seconds),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SonifyError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let weights = [self.weights.rms, self.weights.centroid, self.weights.flatness];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(SonifyError::Config("descriptor weights must be non-negative".into()));
        }
        if self.density_cap == 0 {
            return Err(SonifyError::Config("density_cap must be at least 1".into()));
        }
        if !(self.min_duration >= 0.0 && self.min_duration.is_finite()) || !self.pitch_bend_octaves.is_finite() {
            return Err(SonifyError::Config("min_duration and pitch_bend_octaves must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrainEntry {
    /// Seconds from the start of the schedule.
    pub onset: f64,
    pub grain_index: usize,
    pub amplitude: f64,
    pub pitch_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainSchedule {
    pub entries: Vec<GrainEntry>,
    pub total_duration: f64,
}

impl GrainSchedule {
    pub fn empty(total_duration: f64) -> Self {
        Self {
            entries: Vec::new(),
            total_duration,
        }
    }

    /// One JSON entry per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    /// Parses entries written by [`to_jsonl`](Self::to_jsonl). The duration
    /// is not part of the line format and must be supplied.
    pub fn from_jsonl(text: &str, total_duration: f64) -> Result<Self, SonifyError> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| SonifyError::Config(format!("schedule line {}: {e}", n + 1))))
            .collect::<Result<Vec<GrainEntry>, _>>()?;
        Ok(Self {
            entries,
            total_duration,
        })
    }

    /// Checks onset order, index validity and value ranges against `corpus`.
    pub fn validate(&self, corpus: &GrainCorpus) -> Result<(), SonifyError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.grain_index >= corpus.len() {
                return Err(SonifyError::Config(format!("entry {i}: grain {} not in corpus", e.grain_index)));
            }
            if !(e.amplitude > 0.0 && e.amplitude <= 1.0) || !(e.pitch_ratio > 0.0 && e.pitch_ratio.is_finite()) {
                return Err(SonifyError::Config(format!("entry {i}: amplitude or pitch out of range")));
            }
            if !(e.onset >= 0.0 && e.onset.is_finite()) {
                return Err(SonifyError::Config(format!("entry {i}: bad onset {}", e.onset)));
            }
        }
        if self.entries.windows(2).any(|w| w[1].onset < w[0].onset) {
            return Err(SonifyError::Config("onsets must be non-decreasing".into()));
        }
        Ok(())
    }
}

/// Maps events to grains one at a time; the session drives it tick by tick.
/// The corpus is passed to each call and must be the one given to [`Scheduler::new`].
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: MappingConfig,
    rng: SimRng,
    max_rms: f64,
}

impl Scheduler {
    pub fn new(corpus: &GrainCorpus, config: &MappingConfig) -> Result<Self, SonifyError> {
        if corpus.is_empty() {
            return Err(SonifyError::Config("grain corpus is empty".into()));
        }
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            rng: SimRng::seed_from(config.seed),
            max_rms: corpus.max_rms(),
        })
    }

    pub fn amplitude(&self, slips: usize) -> f64 {
        (self.config.gain * libm::log10(1.0 + slips as f64)).clamp(0.0, 1.0)
    }

    /// Fraction of the centroid sweep completed at `step`.
    fn sweep(&self, step: usize) -> f64 {
        if self.config.sweep_steps == 0 {
            1.0
        } else {
            (step as f64 / f64::from(self.config.sweep_steps)).min(1.0)
        }
    }

    pub fn target_centroid(&self, step: usize) -> f64 {
        let c = &self.config;
        c.centroid_hi * libm::pow(c.centroid_lo / c.centroid_hi, self.sweep(step))
    }

    /// Appends the grains for `event`, whose first step starts at `start` seconds.
    /// Entries come out in step order; onsets are not sorted across steps.
    pub fn schedule_event(&mut self, corpus: &GrainCorpus, event: &CascadeEvent, start: f64, out: &mut Vec<GrainEntry>) {
        for (step, slips) in event.step_sizes().enumerate() {
            let amplitude = self.amplitude(slips);
            if amplitude <= 0.0 {
                continue;
            }
            let target = Descriptor {
                rms: amplitude * self.max_rms,
                centroid: self.target_centroid(step),
                flatness: self.config.target_flatness,
            };
            let grain_index = corpus.select_grain(&target, &self.config.weights);
            let pitch_ratio = libm::exp2(-self.config.pitch_bend_octaves * self.sweep(step));
            let step_seconds = self.config.step_seconds;
            let slot = start + step as f64 * step_seconds;
            for _ in 0..slips.min(self.config.density_cap) {
                out.push(GrainEntry {
                    onset: slot + self.rng.unit_f64() * step_seconds,
                    grain_index,
                    amplitude,
                    pitch_ratio,
                });
            }
        }
    }

    /// Seconds until the last grain in `entries` has finished playing.
    pub fn end_of(corpus: &GrainCorpus, entries: &[GrainEntry]) -> f64 {
        let sr = f64::from(corpus.sample_rate());
        entries
            .iter()
            .map(|e| e.onset + corpus.grains()[e.grain_index].length as f64 / sr / e.pitch_ratio)
            .fold(0.0, f64::max)
    }
}

/// Turns an event stream into a grain schedule.
///
/// Events must be ordered by strictly increasing `event_id`; event `e`
/// starts at `(e.event_id - first_id) * tick_seconds`. Onsets are jittered
/// uniformly inside each step's slot from the config seed.
pub fn events_to_schedule(
    events: &[CascadeEvent],
    corpus: &GrainCorpus,
    config: &MappingConfig,
) -> Result<GrainSchedule, SonifyError> {
    let mut scheduler = Scheduler::new(corpus, config)?;
    if events.windows(2).any(|w| w[1].event_id <= w[0].event_id) {
        return Err(SonifyError::Config("events must be ordered by increasing event_id".into()));
    }
    let first = events.first().map_or(0, |e| e.event_id);
    let mut entries = Vec::new();
    for ev in events {
        let start = (ev.event_id - first) as f64 * config.tick_seconds;
        scheduler.schedule_event(corpus, ev, start, &mut entries);
    }
    entries.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let span = events.last().map_or(0.0, |e| (e.event_id - first + 1) as f64 * config.tick_seconds);
    let total_duration = config.min_duration.max(span).max(Scheduler::end_of(corpus, &entries));
    Ok(GrainSchedule {
        entries,
        total_duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Site, Slip};
    use crate::sonify::corpus::{ingest_corpus, synthetic_crackle};

    fn corpus() -> GrainCorpus {
        ingest_corpus(&synthetic_crackle(16_000, 2.0, 3), 16_000, 80.0, 20.0).unwrap()
    }

    fn event(id: u64, steps: &[usize]) -> CascadeEvent {
        let steps: Vec<Vec<Slip>> = steps
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|i| Slip {
                        site: Site::new(i, 0),
                        released: 4.0,
                    })
                    .collect()
            })
            .collect();
        let size = steps.iter().map(Vec::len).sum::<usize>() as u64;
        CascadeEvent {
            event_id: id,
            trigger_site: Site::new(0, 0),
            duration: steps.len() as u64,
            steps,
            size,
            area: size,
            boundary_loss: 0.0,
            magnitude: 0.0,
            moment: None,
        }
    }

    #[test]
    fn silent_events_give_empty_schedule() {
        let c = corpus();
        let cfg = MappingConfig::default();
        let s = events_to_schedule(&[event(0, &[]), event(1, &[])], &c, &cfg).unwrap();
        assert!(s.entries.is_empty());
        assert_eq!(s.total_duration, cfg.min_duration);
    }

    #[test]
    fn one_slip_gives_one_entry() {
        let c = corpus();
        let s = events_to_schedule(&[event(0, &[1])], &c, &MappingConfig::default()).unwrap();
        assert_eq!(s.entries.len(), 1);
        let e = s.entries[0];
        assert!((e.amplitude - 0.5 * 2f64.log10()).abs() < 1e-15);
        assert!(e.onset >= 0.0 && e.onset < 0.01);
        s.validate(&c).unwrap();
    }

    #[test]
    fn bigger_cascade_gives_more_and_louder_grains() {
        let c = corpus();
        let cfg = MappingConfig::default();
        let big = events_to_schedule(&[event(0, &[3, 1])], &c, &cfg).unwrap();
        let small = events_to_schedule(&[event(0, &[1])], &c, &cfg).unwrap();
        // [3, 1] maps to 3 + 1 grains at peak amplitude 0.5 log10(4);
        // [1] maps to 1 grain at 0.5 log10(2).
        assert_eq!(big.entries.len(), 4);
        assert_eq!(small.entries.len(), 1);
        let peak = |s: &GrainSchedule| s.entries.iter().map(|e| e.amplitude).fold(0.0, f64::max);
        assert!((peak(&big) - 0.5 * 4f64.log10()).abs() < 1e-15);
        assert!(peak(&big) > peak(&small));
    }

    #[test]
    fn density_cap_limits_grains_per_step() {
        let c = corpus();
        let cfg = MappingConfig { density_cap: 3, ..MappingConfig::default() };
        let s = events_to_schedule(&[event(0, &[50, 2])], &c, &cfg).unwrap();
        assert_eq!(s.entries.len(), 5);
        assert!(s.entries.iter().all(|e| e.amplitude <= 1.0));
    }

    #[test]
    fn centroid_target_descends_with_steps() {
        let c = corpus();
        let cfg = MappingConfig::default();
        let sch = Scheduler::new(&c, &cfg).unwrap();
        assert_eq!(sch.target_centroid(0), 2500.0);
        assert!((sch.target_centroid(20) - 300.0).abs() < 1e-9);
        assert!((sch.target_centroid(100) - 300.0).abs() < 1e-9);
        for k in 0..20 {
            assert!(sch.target_centroid(k + 1) < sch.target_centroid(k));
        }
    }

    #[test]
    fn empty_corpus_is_a_config_error() {
        let empty = GrainCorpus::new(16_000, vec![], vec![]).unwrap();
        let err = events_to_schedule(&[event(0, &[1])], &empty, &MappingConfig::default()).unwrap_err();
        assert!(matches!(err, SonifyError::Config(_)));
    }

    #[test]
    fn out_of_order_events_are_rejected() {
        let c = corpus();
        assert!(events_to_schedule(&[event(3, &[1]), event(2, &[1])], &c, &MappingConfig::default()).is_err());
    }

    #[test]
    fn onsets_sorted_and_deterministic() {
        let c = corpus();
        let cfg = MappingConfig::default();
        let evs: Vec<_> = (0..20).map(|i| event(i, &[5, 3, 8, 1])).collect();
        let a = events_to_schedule(&evs, &c, &cfg).unwrap();
        let b = events_to_schedule(&evs, &c, &cfg).unwrap();
        assert_eq!(a, b);
        a.validate(&c).unwrap();
    }

    #[test]
    fn dominating_stream_schedules_at_least_as_many_grains() {
        let c = corpus();
        let cfg = MappingConfig::default();
        let low = [event(0, &[1, 2]), event(1, &[4])];
        let high = [event(0, &[2, 2, 1]), event(1, &[9])];
        let n = |e: &[CascadeEvent]| events_to_schedule(e, &c, &cfg).unwrap().entries.len();
        assert!(n(&high) >= n(&low));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus();
        let s = events_to_schedule(&[event(0, &[3, 2]), event(1, &[1])], &c, &MappingConfig::default()).unwrap();
        let text = s.to_jsonl();
        assert_eq!(text.lines().count(), s.entries.len());
        assert_eq!(GrainSchedule::from_jsonl(&text, s.total_duration).unwrap(), s);
    }

    #[test]
    fn mapping_from_kv() {
        let kv = KvConfig::parse("gain = 0.8\ndensity_cap = 2\nweight_rms = 3").unwrap();
        let cfg = MappingConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.gain, 0.8);
        assert_eq!(cfg.density_cap, 2);
        assert_eq!(cfg.weights.rms, 3.0);
        assert!(MappingConfig::from_kv(&KvConfig::parse("gain = 0").unwrap()).is_err());
        assert!(MappingConfig::from_kv(&KvConfig::parse("volume = 1").unwrap()).is_err());
    }
}
