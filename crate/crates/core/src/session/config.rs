use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::kv::KvConfig;
use crate::model::{ModelConfig, MODEL_KEYS};
use crate::sonify::corpus::{DEFAULT_GRAIN_MS, DEFAULT_HOP_MS};
use crate::sonify::MappingConfig;

pub const MIN_TICK_SECONDS: f64 = 0.005;
pub const MAX_TICK_SECONDS: f64 = 1.0;

/// Sample rate and length of the built-in corpus used when no WAV is given.
pub const SYNTHETIC_CORPUS_RATE: u32 = 22_050;
pub const SYNTHETIC_CORPUS_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SonifySettings {
    /// WAV file to cut grains from. Without one the session synthesizes a
    /// crackle corpus from the session seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    pub grain_ms: f64,
    pub hop_ms: f64,
    pub mapping: MappingConfig,
}

impl Default for SonifySettings {
    fn default() -> Self {
        Self {
            corpus: None,
            grain_ms: DEFAULT_GRAIN_MS,
            hop_ms: DEFAULT_HOP_MS,
            mapping: MappingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub model: ModelConfig,
    pub tick_seconds: f64,
    pub seed: u64,
    /// A stats message goes out every this many ticks.
    pub stats_interval: u64,
    /// Lower cutoff for the running exponent estimate.
    pub s_min: u64,
    /// The session ends by itself after this many ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ticks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sonify: Option<SonifySettings>,
}

pub const SESSION_KEYS: &[&str] = &[
    "tick_seconds",
    "seed",
    "stats_interval",
    "s_min",
    "max_ticks",
    "sonify",
    "corpus",
    "grain_ms",
    "hop_ms",
];

impl SessionConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            tick_seconds: 0.05,
            seed: 0,
            stats_interval: 100,
            s_min: 1,
            max_ticks: None,
            sonify: None,
        }
    }

    /// Reads a session file: the model keys, [`SESSION_KEYS`], and mapping
    /// keys under `sonify.`. Sonification is on when `sonify = true`, or
    /// when `corpus` or any `sonify.` key is present and `sonify` is not `false`.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, SessionError> {
        let known: Vec<&str> = MODEL_KEYS.iter().chain(SESSION_KEYS).copied().collect();
        kv.reject_unknown(&known, &["sonify."])?;
        let model = ModelConfig::from_kv(kv).map_err(|e| SessionError::Config(e.to_string()))?;
        let mut cfg = Self::new(model);
        cfg.tick_seconds = kv.get_or("tick_seconds", cfg.tick_seconds)?;
        cfg.seed = kv.get_or("seed", cfg.seed)?;
        cfg.stats_interval = kv.get_or("stats_interval", cfg.stats_interval)?;
        cfg.s_min = kv.get_or("s_min", cfg.s_min)?;
        cfg.max_ticks = kv.get("max_ticks")?;

        let section = kv.section("sonify.");
        let implied = kv.contains("corpus") || kv.contains("grain_ms") || kv.contains("hop_ms") || section != KvConfig::default();
        if kv.get::<bool>("sonify")?.unwrap_or(implied) {
            let d = SonifySettings::default();
            let mut mapping = MappingConfig::from_kv(&section).map_err(|e| SessionError::Config(e.to_string()))?;
            if !section.contains("tick_seconds") {
                mapping.tick_seconds = cfg.tick_seconds;
            }
            cfg.sonify = Some(SonifySettings {
                corpus: kv.get("corpus")?,
                grain_ms: kv.get_or("grain_ms", d.grain_ms)?,
                hop_ms: kv.get_or("hop_ms", d.hop_ms)?,
                mapping,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv_text(text: &str) -> Result<Self, SessionError> {
        Self::from_kv(&KvConfig::parse(text)?)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.model.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        if !(MIN_TICK_SECONDS..=MAX_TICK_SECONDS).contains(&self.tick_seconds) {
            return Err(SessionError::Config(format!(
                "tick_seconds must lie in [{MIN_TICK_SECONDS}, {MAX_TICK_SECONDS}], got {}",
                self.tick_seconds
            )));
        }
        if self.stats_interval == 0 {
            return Err(SessionError::Config("stats_interval must be at least 1".into()));
        }
        if self.s_min == 0 {
            return Err(SessionError::Config("s_min must be at least 1".into()));
        }
        if self.max_ticks == Some(0) {
            return Err(SessionError::Config("max_ticks must be at least 1".into()));
        }
        if let Some(s) = &self.sonify {
            s.mapping.validate().map_err(|e| SessionError::Config(e.to_string()))?;
            if !(s.grain_ms >= 5.0 && s.grain_ms.is_finite()) || !(s.hop_ms > 0.0 && s.hop_ms.is_finite()) {
                return Err(SessionError::Config("grain_ms must be at least 5 and hop_ms positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    #[test]
    fn defaults_from_minimal_file() {
        let cfg = SessionConfig::from_kv_text("model = springblock\n").unwrap();
        assert_eq!(cfg.model, ModelConfig::default_for(ModelKind::Springblock));
        assert_eq!(cfg.tick_seconds, 0.05);
        assert!(cfg.sonify.is_none());
    }

    #[test]
    fn tick_seconds_bounds() {
        assert!(SessionConfig::from_kv_text("tick_seconds = 0.005").is_ok());
        assert!(SessionConfig::from_kv_text("tick_seconds = 1").is_ok());
        assert!(SessionConfig::from_kv_text("tick_seconds = 0.004").is_err());
        assert!(SessionConfig::from_kv_text("tick_seconds = 1.5").is_err());
    }

    #[test]
    fn sonify_section() {
        let cfg = SessionConfig::from_kv_text("tick_seconds = 0.1\nsonify.gain = 0.7\nhop_ms = 10").unwrap();
        let s = cfg.sonify.unwrap();
        assert_eq!(s.mapping.gain, 0.7);
        assert_eq!(s.mapping.tick_seconds, 0.1);
        assert_eq!(s.hop_ms, 10.0);
        assert!(s.corpus.is_none());
        let off = SessionConfig::from_kv_text("sonify = false\ncorpus = x.wav").unwrap();
        assert!(off.sonify.is_none());
        assert!(SessionConfig::from_kv_text("sonify.volume = 3").is_err());
    }

    #[test]
    fn unknown_and_invalid_keys() {
        assert!(SessionConfig::from_kv_text("colour = red").is_err());
        assert!(SessionConfig::from_kv_text("model = springblock\nalpha = 0.3").is_err());
        assert!(SessionConfig::from_kv_text("stats_interval = 0").is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = SessionConfig::from_kv_text("model = oslo\nsize = 16\nsonify = true\nmax_ticks = 50").unwrap();
        let back: SessionConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
