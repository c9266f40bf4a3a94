//! Uniform handle over the three lattice models, built from a serializable config.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::event::{CascadeEvent, Site, DEFAULT_MAX_SWEEPS};
use crate::kv::{KvConfig, KvError};
use crate::oslo::OsloPile;
use crate::sandpile::{Sandpile, DEFAULT_THRESHOLD};
use crate::springblock::{self, SpringBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sandpile,
    Oslo,
    Springblock,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Sandpile => "sandpile",
            ModelKind::Oslo => "oslo",
            ModelKind::Springblock => "springblock",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sandpile" => Ok(ModelKind::Sandpile),
            "oslo" => Ok(ModelKind::Oslo),
            "springblock" => Ok(ModelKind::Springblock),
            other => Err(ModelError::Config(format!(
                "unknown model `{other}`; expected sandpile, oslo or springblock"
            ))),
        }
    }
}

/// Model parameters. Pile models are driven by grains per tick, the
/// spring-block lattice by its plate rate; in both cases a drive vector `v`
/// sets the rate to `rate_scale * |v|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Sandpile {
        width: usize,
        height: usize,
        threshold: u32,
        grains_per_tick: f64,
        rate_scale: f64,
        max_sweeps: u64,
    },
    Oslo {
        length: usize,
        grains_per_tick: f64,
        rate_scale: f64,
        max_sweeps: u64,
    },
    Springblock {
        side: usize,
        alpha: f64,
        plate_rate: f64,
        rate_scale: f64,
        residual_noise: f64,
        max_sweeps: u64,
    },
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Sandpile => ModelConfig::Sandpile {
                width: 64,
                height: 64,
                threshold: DEFAULT_THRESHOLD,
                grains_per_tick: 1.0,
                rate_scale: 1.0,
                max_sweeps: DEFAULT_MAX_SWEEPS,
            },
            ModelKind::Oslo => ModelConfig::Oslo {
                length: 32,
                grains_per_tick: 1.0,
                rate_scale: 1.0,
                max_sweeps: DEFAULT_MAX_SWEEPS,
            },
            ModelKind::Springblock => ModelConfig::Springblock {
                side: springblock::DEFAULT_INTERACTIVE_SIDE,
                alpha: springblock::DEFAULT_ALPHA,
                plate_rate: 0.0,
                rate_scale: springblock::DEFAULT_RATE_SCALE,
                residual_noise: 0.0,
                max_sweeps: DEFAULT_MAX_SWEEPS,
            },
        }
    }

    /// Reads `model` plus the keys in [`MODEL_KEYS`] that apply to it.
    /// `size` sets the grid side, or the Oslo pile length; `width` and
    /// `height` override it for the sandpile.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ModelError> {
        let kind: ModelKind = kv.get("model").map_err(kv_err)?.unwrap_or(ModelKind::Sandpile);
        let size: Option<usize> = kv.get("size").map_err(kv_err)?;
        let max_sweeps = kv.get_or("max_sweeps", DEFAULT_MAX_SWEEPS).map_err(kv_err)?;
        let cfg = match Self::default_for(kind) {
            ModelConfig::Sandpile {
                width,
                height,
                threshold,
                grains_per_tick,
                rate_scale,
                ..
            } => ModelConfig::Sandpile {
                width: kv.get_or("width", size.unwrap_or(width)).map_err(kv_err)?,
                height: kv.get_or("height", size.unwrap_or(height)).map_err(kv_err)?,
                threshold: kv.get_or("threshold", threshold).map_err(kv_err)?,
                grains_per_tick: kv.get_or("grains_per_tick", grains_per_tick).map_err(kv_err)?,
                rate_scale: kv.get_or("rate_scale", rate_scale).map_err(kv_err)?,
                max_sweeps,
            },
            ModelConfig::Oslo {
                length,
                grains_per_tick,
                rate_scale,
                ..
            } => ModelConfig::Oslo {
                length: kv.get_or("length", size.unwrap_or(length)).map_err(kv_err)?,
                grains_per_tick: kv.get_or("grains_per_tick", grains_per_tick).map_err(kv_err)?,
                rate_scale: kv.get_or("rate_scale", rate_scale).map_err(kv_err)?,
                max_sweeps,
            },
            ModelConfig::Springblock {
                side,
                alpha,
                plate_rate,
                rate_scale,
                residual_noise,
                ..
            } => ModelConfig::Springblock {
                side: size.unwrap_or(side),
                alpha: kv.get_or("alpha", alpha).map_err(kv_err)?,
                plate_rate: kv.get_or("plate_rate", plate_rate).map_err(kv_err)?,
                rate_scale: kv.get_or("rate_scale", rate_scale).map_err(kv_err)?,
                residual_noise: kv.get_or("residual_noise", residual_noise).map_err(kv_err)?,
                max_sweeps,
            },
        };
        let foreign: &[&str] = match kind {
            ModelKind::Sandpile => &["length", "alpha", "plate_rate", "residual_noise"],
            ModelKind::Oslo => &["width", "height", "threshold", "alpha", "plate_rate", "residual_noise"],
            ModelKind::Springblock => &["width", "height", "length", "threshold", "grains_per_tick"],
        };
        if let Some(key) = foreign.iter().find(|k| kv.contains(k)) {
            return Err(ModelError::Config(format!("`{key}` does not apply to the {kind} model")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model config serializes")
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Sandpile { .. } => ModelKind::Sandpile,
            ModelConfig::Oslo { .. } => ModelKind::Oslo,
            ModelConfig::Springblock { .. } => ModelKind::Springblock,
        }
    }

    /// Drive rate at session start: grains per tick, or plate rate.
    pub fn initial_rate(&self) -> f64 {
        match *self {
            ModelConfig::Sandpile { grains_per_tick, .. } | ModelConfig::Oslo { grains_per_tick, .. } => grains_per_tick,
            ModelConfig::Springblock { plate_rate, .. } => plate_rate,
        }
    }

    pub fn rate_scale(&self) -> f64 {
        match *self {
            ModelConfig::Sandpile { rate_scale, .. }
            | ModelConfig::Oslo { rate_scale, .. }
            | ModelConfig::Springblock { rate_scale, .. } => rate_scale,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let rates = [("rate", self.initial_rate()), ("rate_scale", self.rate_scale())];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        // Building is cheap at every size used in practice and checks the rest.
        Model::build(self, 0).map(|_| ())
    }
}

fn kv_err(e: KvError) -> ModelError {
    ModelError::Config(e.to_string())
}

/// Every key [`ModelConfig::from_kv`] understands.
pub const MODEL_KEYS: &[&str] = &[
    "model",
    "size",
    "width",
    "height",
    "length",
    "threshold",
    "alpha",
    "plate_rate",
    "grains_per_tick",
    "rate_scale",
    "residual_noise",
    "max_sweeps",
];

#[derive(Debug, Clone)]
pub enum Model {
    Sandpile(Sandpile),
    Oslo(OsloPile),
    Springblock(SpringBlock),
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Ok(match *config {
            ModelConfig::Sandpile {
                width,
                height,
                threshold,
                max_sweeps,
                ..
            } => Model::Sandpile(Sandpile::new(width, height, threshold, seed)?.with_max_sweeps(max_sweeps)),
            ModelConfig::Oslo { length, max_sweeps, .. } => {
                Model::Oslo(OsloPile::new(length, seed)?.with_max_sweeps(max_sweeps))
            }
            ModelConfig::Springblock {
                side,
                alpha,
                rate_scale,
                residual_noise,
                max_sweeps,
                ..
            } => Model::Springblock(
                SpringBlock::new(side, alpha, seed)?
                    .with_max_sweeps(max_sweeps)
                    .with_residual_noise(residual_noise)?
                    .with_rate_scale(rate_scale)?,
            ),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sandpile(_) => ModelKind::Sandpile,
            Model::Oslo(_) => ModelKind::Oslo,
            Model::Springblock(_) => ModelKind::Springblock,
        }
    }

    pub fn snapshot(&self) -> String {
        match self {
            Model::Sandpile(m) => m.snapshot(),
            Model::Oslo(m) => m.snapshot(),
            Model::Springblock(m) => m.snapshot(),
        }
    }

    /// One unit of manual drive: a grain at `site` (random if `None`; the
    /// Oslo pile always feeds column 0), or for the spring-block lattice a
    /// kick of the block at `site` (an extremal drive if `None`).
    pub fn drop_at(&mut self, site: Option<Site>) -> Result<CascadeEvent, ModelError> {
        match self {
            Model::Sandpile(m) => {
                let site = site.unwrap_or_else(|| m.random_site());
                m.add_grain(site)
            }
            Model::Oslo(m) => match site {
                Some(s) if s != Site::new(0, 0) => Err(ModelError::Domain(
                    "the Oslo pile only accepts grains at column 0".into(),
                )),
                _ => m.add_grain(),
            },
            Model::Springblock(m) => match site {
                Some(s) => m.kick(s),
                None => m.drive_extremal(),
            },
        }
    }
}
