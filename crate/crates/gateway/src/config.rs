use std::path::{Path, PathBuf};
use std::time::Duration;

use gesture_ucb::{ExperimentConfig, Result};
use serde::{Deserialize, Serialize};

/// A difficulty level a player can pick in the lobby.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Strength of the decoder corruption, in [0, 1].
    pub severity: f64,
    pub path_length: usize,
    #[serde(default = "yes")]
    pub learning: bool,
}

fn yes() -> bool {
    true
}

pub fn default_presets() -> Vec<Preset> {
    let preset = |name: &str, description: &str, severity| Preset {
        name: name.into(),
        description: description.into(),
        severity,
        path_length: 30,
        learning: true,
    };
    vec![
        preset("easy", "mild decoder corruption", 0.3),
        preset("standard", "decoder near 60% frame accuracy", 0.6),
        preset("hard", "heavily corrupted decoder", 0.8),
        Preset {
            learning: false,
            ..preset("static", "standard corruption, adaptation off", 0.6)
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// Population, bandit and post-processing settings. Seeds, severity and
    /// rounds are ignored; presets take their place.
    pub experiment: ExperimentConfig,
    pub presets: Vec<Preset>,
    /// Player snapshots live in `<data_dir>/players`.
    pub data_dir: PathBuf,
    /// Write a replayable frame log per round to `<data_dir>/sessions`.
    pub record_sessions: bool,
    /// Overrides the frame period implied by `experiment.frames_per_second`.
    pub frame_interval_ms: Option<f64>,
    pub outbound_capacity: usize,
    pub handshake_timeout_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            presets: default_presets(),
            data_dir: PathBuf::from("gateway-data"),
            record_sessions: false,
            frame_interval_ms: None,
            outbound_capacity: 256,
            handshake_timeout_ms: 10_000,
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| gesture_ucb::Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| gesture_ucb::Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(gesture_ucb::Error::InvalidConfig(m));
        if self.presets.is_empty() {
            return bad("at least one preset is required".into());
        }
        for p in &self.presets {
            if !(0.0..=1.0).contains(&p.severity) {
                return bad(format!("preset {}: severity must lie in [0, 1]", p.name));
            }
            if p.path_length == 0 {
                return bad(format!("preset {}: path_length must be >= 1", p.name));
            }
        }
        if self.outbound_capacity == 0 {
            return bad("outbound_capacity must be >= 1".into());
        }
        if let Some(ms) = self.frame_interval_ms {
            if !(ms > 0.0 && ms.is_finite()) {
                return bad("frame_interval_ms must be positive".into());
            }
        }
        self.experiment.validate()
    }

    pub fn preset(&self, name: &str) -> Option<&Preset> {
        self.presets.iter().find(|p| p.name == name)
    }

    pub fn frame_interval(&self) -> Duration {
        let ms = self
            .frame_interval_ms
            .unwrap_or(1000.0 / self.experiment.frames_per_second);
        Duration::from_secs_f64(ms / 1000.0)
    }

    pub fn players_dir(&self) -> PathBuf {
        self.data_dir.join("players")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = GatewayConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_interval(), Duration::from_millis(40));
        assert!(cfg.preset("standard").is_some());
        assert!(cfg.preset("nope").is_none());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = GatewayConfig {
            frame_interval_ms: Some(2.0),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: GatewayConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shipped_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/gateway.toml");
        let cfg = GatewayConfig::load(&path).unwrap();
        assert_eq!(cfg.presets, default_presets());
        assert_eq!(cfg.experiment.dim, 64);
        assert!(cfg.record_sessions);
    }

    #[test]
    fn rejects_bad_presets() {
        let mut cfg = GatewayConfig::default();
        cfg.presets[0].severity = 1.5;
        assert!(cfg.validate().is_err());
        cfg.presets.clear();
        assert!(cfg.validate().is_err());
    }
}
