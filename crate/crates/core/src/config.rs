//! Experiment configuration, loaded from TOML.
//!
//! Frame-count settings left unset are derived from `frames_per_second`:
//! the post-processing window and the credit window both cover 40 ms.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bandit::{BanditModel, DEFAULT_ALPHA, DEFAULT_DIM, DEFAULT_RECOMPUTE_INTERVAL};
use crate::context::BurstShape;
use crate::error::{Error, Result};
use crate::game::{SimPlayerPolicy, N_GESTURES};
use crate::postprocess::{frames_for_millis, PostProcessConfig};

/// Half-open range of user seeds, written `a..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn iter(&self) -> std::ops::Range<u64> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl FromStr for SeedRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("seed range must look like a..b, got {s:?}"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start: u64 = a.trim().parse().map_err(|_| bad())?;
        let end: u64 = b.trim().parse().map_err(|_| bad())?;
        if end <= start {
            return Err(bad());
        }
        Ok(Self { start, end })
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl Serialize for SeedRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeedRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SeverityMode {
    Fixed {
        value: f64,
    },
    /// Per-user bisection towards a target baseline per-frame accuracy.
    Calibrate {
        target_acc: f64,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_calibration_frames")]
        frames: usize,
    },
    /// Every user is run once per listed severity.
    Grid {
        values: Vec<f64>,
    },
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_calibration_frames() -> usize {
    3000
}

impl Default for SeverityMode {
    fn default() -> Self {
        SeverityMode::Calibrate {
            target_acc: 0.6,
            tolerance: default_tolerance(),
            frames: default_calibration_frames(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSpec {
    pub name: String,
    pub learning: bool,
    pub path_length: usize,
    /// Rounds sharing a session number share an in-memory model; a new
    /// session starts from the persisted snapshot.
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSection {
    pub alpha: f64,
    pub credit_window_frames: Option<usize>,
    pub recompute_interval: u32,
}

impl Default for BanditSection {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            credit_window_frames: None,
            recompute_interval: DEFAULT_RECOMPUTE_INTERVAL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcessSection {
    pub tau_b: f64,
    pub tau_e: f64,
    pub window_frames: Option<usize>,
    pub refractory_frames: Option<usize>,
}

impl Default for PostProcessSection {
    fn default() -> Self {
        Self {
            tau_b: 0.5,
            tau_e: 0.5,
            window_frames: None,
            refractory_frames: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureSection {
    /// Active frames per gesture; defaults to the post-processing window.
    pub active_frames: Option<usize>,
    pub lead_rest_min: usize,
    pub lead_rest_max: usize,
    pub tail_frames: usize,
}

impl Default for GestureSection {
    fn default() -> Self {
        Self {
            active_frames: None,
            lead_rest_min: 5,
            lead_rest_max: 15,
            tail_frames: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub action_rate: f64,
    pub penalize_wrong_emission: bool,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            action_rate: 1.0 / 3.0,
            penalize_wrong_emission: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlayerSection {
    pub report_timeout: Option<u32>,
    pub cadence: Option<u32>,
    pub retry_limit: u32,
    /// Round attempt budget as a multiple of the path length.
    pub stall_budget_factor: f64,
}

impl Default for PlayerSection {
    fn default() -> Self {
        Self {
            report_timeout: None,
            cadence: None,
            retry_limit: 40,
            stall_budget_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: SeedRange,
    pub population_seed: u64,
    pub dim: usize,
    pub frames_per_second: f64,
    pub severity: SeverityMode,
    pub rounds: Vec<RoundSpec>,
    /// Attempts per gesture in the first/last precision windows.
    pub metric_k: usize,
    /// Attempts aggregated per point of the precision series.
    pub series_block: usize,
    pub persist_dir: Option<PathBuf>,
    pub bandit: BanditSection,
    pub postprocess: PostProcessSection,
    pub gesture: GestureSection,
    pub game: GameSection,
    pub player: PlayerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: SeedRange { start: 0, end: 20 },
            population_seed: 7,
            dim: DEFAULT_DIM,
            frames_per_second: 25.0,
            severity: SeverityMode::default(),
            rounds: default_rounds(60),
            metric_k: 25,
            series_block: 5,
            persist_dir: None,
            bandit: BanditSection::default(),
            postprocess: PostProcessSection::default(),
            gesture: GestureSection::default(),
            game: GameSection::default(),
            player: PlayerSection::default(),
        }
    }
}

/// Baseline and learning in session one, learning again in session two.
pub fn default_rounds(path_length: usize) -> Vec<RoundSpec> {
    vec![
        RoundSpec {
            name: "s1_baseline".into(),
            learning: false,
            path_length,
            session: 1,
        },
        RoundSpec {
            name: "s1_learning".into(),
            learning: true,
            path_length,
            session: 1,
        },
        RoundSpec {
            name: "s2_learning".into(),
            learning: true,
            path_length,
            session: 2,
        },
    ]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn window_frames(&self) -> usize {
        self.postprocess
            .window_frames
            .unwrap_or_else(|| frames_for_millis(40.0, self.frames_per_second))
    }

    pub fn credit_window(&self) -> usize {
        self.bandit
            .credit_window_frames
            .unwrap_or_else(|| frames_for_millis(40.0, self.frames_per_second))
    }

    pub fn postprocess_config(&self) -> PostProcessConfig {
        let window = self.window_frames();
        PostProcessConfig {
            tau_b: self.postprocess.tau_b,
            tau_e: self.postprocess.tau_e,
            window_frames: window,
            refractory_frames: self.postprocess.refractory_frames.unwrap_or(window),
        }
    }

    pub fn burst_shape(&self) -> BurstShape {
        BurstShape {
            lead_rest_min: self.gesture.lead_rest_min,
            lead_rest_max: self.gesture.lead_rest_max,
            active_frames: self.gesture.active_frames.unwrap_or_else(|| self.window_frames()),
            tail_frames: self.gesture.tail_frames,
        }
    }

    pub fn player_policy(&self) -> SimPlayerPolicy {
        let gesture = self.burst_shape().active_frames as u32;
        let timeout = self.player.report_timeout.unwrap_or(gesture);
        SimPlayerPolicy {
            report_timeout: timeout,
            retry_limit: self.player.retry_limit,
            cadence: self.player.cadence.unwrap_or(timeout + 2),
        }
    }

    pub fn stall_budget(&self, path_length: usize) -> usize {
        ((path_length as f64) * self.player.stall_budget_factor).ceil() as usize
    }

    pub fn fresh_model(&self) -> Result<BanditModel> {
        BanditModel::new(self.dim, N_GESTURES, self.bandit.alpha, self.credit_window())?
            .with_recompute_interval(self.bandit.recompute_interval)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rounds.is_empty() {
            return bad("at least one round is required".into());
        }
        if self.metric_k == 0 || self.series_block == 0 {
            return bad("metric_k and series_block must be >= 1".into());
        }
        if self.dim < N_GESTURES {
            return bad(format!("dim must be >= {N_GESTURES}, got {}", self.dim));
        }
        if !(self.frames_per_second > 0.0) {
            return bad("frames_per_second must be > 0".into());
        }
        if self.seeds.is_empty() {
            return bad("seed range is empty".into());
        }
        for r in &self.rounds {
            if r.path_length == 0 {
                return bad(format!("round {} has an empty path", r.name));
            }
        }
        if self.rounds.windows(2).any(|w| w[1].session < w[0].session) {
            return bad("round sessions must be non-decreasing".into());
        }
        match &self.severity {
            SeverityMode::Fixed { value } if !(0.0..=1.0).contains(value) => {
                return bad(format!("severity {value} outside [0, 1]"));
            }
            SeverityMode::Calibrate {
                target_acc,
                tolerance,
                frames,
            } if !(0.0..=1.0).contains(target_acc) || *tolerance <= 0.0 || *frames == 0 => {
                return bad("invalid calibration settings".into());
            }
            SeverityMode::Grid { values }
                if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) =>
            {
                return bad("severity grid must be non-empty and within [0, 1]".into());
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.game.action_rate) {
            return bad("game.action_rate must be in [0, 1]".into());
        }
        if !(self.player.stall_budget_factor > 0.0) {
            return bad("player.stall_budget_factor must be > 0".into());
        }
        if self.credit_window() == 0 {
            return bad("bandit.credit_window_frames must be >= 1".into());
        }
        self.postprocess_config().validate()?;
        let shape = self.burst_shape();
        shape.validate()?;
        self.player_policy().validate(shape.active_frames as u32)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_range_parses() {
        let r: SeedRange = "3..7".parse().unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.to_string(), "3..7");
        assert!("7..3".parse::<SeedRange>().is_err());
        assert!("x..3".parse::<SeedRange>().is_err());
    }

    #[test]
    fn defaults_follow_frame_rate() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.window_frames(), 1);
        assert_eq!(cfg.credit_window(), 1);
        let cfg = ExperimentConfig {
            frames_per_second: 100.0,
            ..Default::default()
        };
        assert_eq!(cfg.window_frames(), 4);
        assert_eq!(cfg.postprocess_config().refractory_frames, 4);
        assert_eq!(cfg.player_policy().report_timeout, 4);
        assert_eq!(cfg.stall_budget(60), 600);
    }

    #[test]
    fn toml_roundtrip_and_keys() {
        let text = r#"
            name = "t"
            seeds = "0..4"
            frames_per_second = 100.0
            [severity]
            mode = "fixed"
            value = 0.3
            [postprocess]
            tau_b = 0.4
            tau_e = 0.6
            window_frames = 3
            refractory_frames = 5
            [[rounds]]
            name = "only"
            learning = true
            path_length = 12
            session = 1
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.postprocess_config().window_frames, 3);
        assert_eq!(cfg.postprocess_config().refractory_frames, 5);
        assert_eq!(cfg.severity, SeverityMode::Fixed { value: 0.3 });
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs() {
        assert!(ExperimentConfig::from_toml_str("rounds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("metric_k = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[postprocess]\ntau_e = 1.5").is_err());
    }
}
