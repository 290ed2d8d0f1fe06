//! One player's live game, independent of the transport.
//!
//! The server feeds it client messages and clock ticks; each call returns
//! the messages to push back. Intents become gesture bursts drawn through
//! the player's fixed decoder corruption, and every tick runs one frame
//! through the shared pipeline.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use gesture_ucb::context::{gesture_burst, rest_frame, BurstShape};
use gesture_ucb::game::{generate_path, EventKind};
use gesture_ucb::harness::{mix_seed, World};
use gesture_ucb::metrics::{summarize, trials_from_log};
use gesture_ucb::postprocess::PostProcessConfig;
use gesture_ucb::replay::REPLAY_VERSION;
use gesture_ucb::store::valid_key;
use gesture_ucb::{
    linalg, write_replay, BanditModel, Frame, Game, Gesture, LogKind, Pipeline,
    ReplayHeader, SessionHeader, SnapshotDocument, SnapshotStore, UserPerturbation, N_GESTURES,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{GatewayConfig, Preset};
use crate::protocol::{ClientBody, Handshake, ServerBody, PROTOCOL_VERSION};

const PURPOSE_DECODER: u64 = 11;
const PURPOSE_PATH: u64 = 12;
const PURPOSE_FRAMES: u64 = 13;
const ROLLING_WINDOW: usize = 25;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("protocol version {0} is not supported")]
    Version(u32),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] gesture_ucb::Error),
}

/// State shared by every session of a server.
pub struct GatewayContext {
    pub config: GatewayConfig,
    pub world: World,
    pub store: Arc<dyn SnapshotStore>,
}

impl GatewayContext {
    pub fn new(config: GatewayConfig, store: Arc<dyn SnapshotStore>) -> gesture_ucb::Result<Self> {
        config.validate()?;
        let world = World::new(&config.experiment)?;
        Ok(Self {
            config,
            world,
            store,
        })
    }
}

fn player_seed(player_id: &str) -> u64 {
    let bytes: Vec<u64> = player_id.bytes().map(u64::from).collect();
    mix_seed(&bytes)
}

pub struct Session {
    ctx: Arc<GatewayContext>,
    player_id: String,
    preset: Preset,
    decoder: UserPerturbation,
    shape: BurstShape,
    post: PostProcessConfig,
    pipe: Pipeline,
    round_start: SnapshotDocument,
    active: bool,
    paused: bool,
    round: u32,
    attempts: usize,
    queue: VecDeque<Frame>,
    rng: ChaCha8Rng,
    recent: VecDeque<bool>,
}

impl Session {
    /// Validates the handshake, restores the player's model when a snapshot
    /// exists and starts the first round.
    pub fn open(ctx: Arc<GatewayContext>, hs: &Handshake) -> Result<(Self, Vec<ServerBody>), SessionError> {
        if hs.proto != PROTOCOL_VERSION {
            return Err(SessionError::Version(hs.proto));
        }
        if valid_key(&hs.player_id).is_err() {
            return Err(SessionError::Protocol(format!(
                "invalid player id {:?}",
                hs.player_id
            )));
        }
        let preset = ctx
            .config
            .preset(&hs.config)
            .cloned()
            .ok_or_else(|| SessionError::Protocol(format!("unknown config {:?}", hs.config)))?;
        let exp = &ctx.config.experiment;
        let (model, resumed) = match ctx.store.load(&hs.player_id)? {
            Some(doc) => {
                let model = BanditModel::restore(&doc)?;
                if model.dim() != exp.dim || model.n_arms() != N_GESTURES {
                    return Err(SessionError::Protocol(format!(
                        "stored model for {} has d = {}, server expects d = {}",
                        hs.player_id,
                        model.dim(),
                        exp.dim
                    )));
                }
                (model, true)
            }
            None => (exp.fresh_model()?, false),
        };
        let post = exp.postprocess_config();
        let mut shape = exp.burst_shape();
        // a human's own reaction time replaces the simulated lead-in
        shape.lead_rest_min = 0;
        shape.lead_rest_max = 0;
        let decoder = decoder_for(&ctx, &hs.player_id, &preset)?;
        let placeholder = Game::new(generate_path(0, 1, 0.0)?);
        let pipe = Pipeline::new(model, post.clone(), placeholder, preset.learning)?;
        let mut session = Self {
            round_start: pipe.bandit().snapshot(),
            ctx,
            player_id: hs.player_id.clone(),
            preset,
            decoder,
            shape,
            post,
            pipe,
            active: false,
            paused: false,
            round: 0,
            attempts: 0,
            queue: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            recent: VecDeque::new(),
        };
        let exp = &session.ctx.config.experiment;
        let welcome = ServerBody::Welcome {
            proto: PROTOCOL_VERSION,
            player_id: session.player_id.clone(),
            config: session.preset.name.clone(),
            resumed,
            dim: exp.dim,
            frames_per_second: exp.frames_per_second,
        };
        let mut out = vec![welcome];
        out.extend(session.start_round()?);
        Ok((session, out))
    }

    pub fn player_id(&self) -> &str {
        &self.player_id
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn model(&self) -> &BanditModel {
        self.pipe.bandit()
    }

    fn start_round(&mut self) -> Result<Vec<ServerBody>, SessionError> {
        self.round += 1;
        let seed = player_seed(&self.player_id);
        let path = generate_path(
            mix_seed(&[seed, self.round as u64, PURPOSE_PATH]),
            self.preset.path_length,
            self.ctx.config.experiment.game.action_rate,
        )?;
        let game = Game::new(path)
            .with_wrong_emission_penalty(self.ctx.config.experiment.game.penalize_wrong_emission);
        let mut model = self.pipe.bandit().clone();
        model.clear_history();
        self.round_start = model.snapshot();
        let mut pipe = Pipeline::new(model, self.post.clone(), game, self.preset.learning)?;
        if self.ctx.config.record_sessions {
            pipe = pipe.with_recording();
        }
        self.pipe = pipe;
        self.rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, self.round as u64, PURPOSE_FRAMES]));
        self.queue.clear();
        self.recent.clear();
        self.attempts = 0;
        self.active = true;
        Ok(vec![self.state_message()])
    }

    pub fn state_message(&self) -> ServerBody {
        ServerBody::GameState {
            round: self.round,
            paused: self.paused,
            active: self.active,
            attempts: self.attempts,
            path: self.pipe.game().path().cells.clone(),
            game: self.pipe.game().state().clone(),
        }
    }

    pub fn handle(&mut self, msg: ClientBody) -> Result<Vec<ServerBody>, SessionError> {
        match msg {
            ClientBody::Intent { gesture } => {
                if !self.active || self.paused {
                    return Ok(Vec::new());
                }
                self.pipe.mark_attempt(gesture);
                self.attempts += 1;
                let burst = gesture_burst(
                    &self.ctx.world.head,
                    &self.ctx.world.prototypes,
                    &self.decoder,
                    gesture.index(),
                    &self.shape,
                    &mut self.rng,
                )?;
                self.queue.extend(burst);
                Ok(vec![self.state_message()])
            }
            ClientBody::Report => {
                if !self.active || self.paused {
                    return Ok(Vec::new());
                }
                let frame = self.pipe.frames_seen();
                let (ev, credited) = self.pipe.report()?;
                let mut out = Vec::new();
                if let Some(r) = ev.reward {
                    out.push(ServerBody::Reward {
                        frame,
                        value: r.value(),
                        source: r.source,
                        credited,
                    });
                }
                out.push(self.state_message());
                Ok(out)
            }
            ClientBody::Start { config } => {
                if self.active {
                    return Err(SessionError::Protocol(
                        "start received while a round is in progress".into(),
                    ));
                }
                if let Some(name) = config {
                    self.switch_preset(&name)?;
                }
                self.paused = false;
                self.start_round()
            }
            ClientBody::Pause => {
                self.paused = true;
                Ok(vec![self.state_message()])
            }
            ClientBody::Resume => {
                self.paused = false;
                Ok(vec![self.state_message()])
            }
        }
    }

    fn switch_preset(&mut self, name: &str) -> Result<(), SessionError> {
        let preset = self
            .ctx
            .config
            .preset(name)
            .cloned()
            .ok_or_else(|| SessionError::Protocol(format!("unknown config {name:?}")))?;
        self.decoder = decoder_for(&self.ctx, &self.player_id, &preset)?;
        self.preset = preset;
        Ok(())
    }

    /// Runs one frame. Does nothing while paused or between rounds.
    pub fn tick(&mut self) -> Result<Vec<ServerBody>, SessionError> {
        if !self.active || self.paused {
            return Ok(Vec::new());
        }
        let frame = match self.queue.pop_front() {
            Some(f) => f,
            None => rest_frame(
                &self.ctx.world.head,
                &self.ctx.world.prototypes,
                &self.decoder,
                &mut self.rng,
            )?,
        };
        let t = self.pipe.frames_seen();
        let pending = self.pipe.game().pending();
        let outcome = self.pipe.frame(&frame)?;
        let mut out = Vec::new();
        if let Some(class) = outcome.emitted {
            out.push(ServerBody::Emission {
                frame: t,
                class,
                pending,
            });
            if self.recent.len() == ROLLING_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(Some(class) == pending);
        }
        if let Some(ev) = outcome.event {
            if let Some(r) = ev.reward {
                out.push(ServerBody::Reward {
                    frame: t,
                    value: r.value(),
                    source: r.source,
                    credited: outcome.credited,
                });
            }
            if ev.kind == EventKind::Advanced {
                out.push(self.state_message());
            }
        }
        let model = self.pipe.bandit();
        let theta_norms = (0..N_GESTURES)
            .map(|i| model.theta(i).map(|th| linalg::norm(&th)))
            .collect::<gesture_ucb::Result<Vec<_>>>()?;
        let state = self.pipe.game().state();
        out.push(ServerBody::Telemetry {
            frame: t,
            arm: outcome.arm,
            scores: outcome.scores,
            theta_norms,
            fnr: (self.attempts > 0).then(|| state.spacebar_count as f64 / self.attempts as f64),
            rolling_precision: (!self.recent.is_empty()).then(|| {
                self.recent.iter().filter(|&&c| c).count() as f64 / self.recent.len() as f64
            }),
        });
        if self.pipe.game().is_completed() {
            out.extend(self.finish_round()?);
        }
        Ok(out)
    }

    fn finish_round(&mut self) -> Result<Vec<ServerBody>, SessionError> {
        self.active = false;
        let name = format!("round{}", self.round);
        let trials = trials_from_log(0, &name, self.pipe.log());
        let completed = self.pipe.game().is_completed();
        let exp = &self.ctx.config.experiment;
        let report = (!trials.is_empty())
            .then(|| summarize(0, &name, &trials, completed, exp.metric_k, exp.series_block))
            .transpose()?;
        let snapshot_saved = match self.save() {
            Ok(()) => true,
            Err(e) => {
                tracing::error!(player = %self.player_id, error = %e, "snapshot save failed");
                false
            }
        };
        if self.ctx.config.record_sessions {
            if let Err(e) = self.write_recording() {
                tracing::error!(player = %self.player_id, error = %e, "session log write failed");
            }
        }
        Ok(vec![
            self.state_message(),
            ServerBody::RoundSummary {
                round: self.round,
                completed,
                attempts: self.attempts,
                fnr: report.as_ref().map(|r| r.fnr),
                mean_delta: report.as_ref().and_then(|r| r.mean_delta),
                per_gesture: report.map(|r| r.per_gesture).unwrap_or_default(),
                snapshot_saved,
            },
        ])
    }

    /// Persists the current model under the player id.
    pub fn save(&self) -> gesture_ucb::Result<()> {
        self.ctx.store.save(&self.player_id, &self.pipe.bandit().snapshot())
    }

    /// Path of the frame log written for `round` when recording is on.
    pub fn recording_path(config: &GatewayConfig, player_id: &str, round: u32) -> PathBuf {
        config
            .sessions_dir()
            .join(format!("{player_id}_round{round}.jsonl"))
    }

    fn write_recording(&self) -> gesture_ucb::Result<()> {
        let Some(frames) = self.pipe.recording() else {
            return Ok(());
        };
        let dir = self.ctx.config.sessions_dir();
        std::fs::create_dir_all(&dir).map_err(|e| gesture_ucb::Error::io(&dir, e))?;
        let exp = &self.ctx.config.experiment;
        let header = ReplayHeader {
            version: REPLAY_VERSION,
            d: exp.dim,
            n: N_GESTURES,
            frame_rate: exp.frames_per_second,
            frames: None,
            session: Some(SessionHeader {
                path: self.pipe.game().path().cells.clone(),
                learning: self.preset.learning,
                postprocess: self.post.clone(),
                penalize_wrong_emission: exp.game.penalize_wrong_emission,
                model: self.round_start.clone(),
            }),
        };
        let path = Self::recording_path(&self.ctx.config, &self.player_id, self.round);
        write_replay(&path, &header, frames)
    }

    /// Gestures attempted this round, in order, as logged by the pipeline.
    pub fn attempted(&self) -> Vec<Gesture> {
        self.pipe
            .log()
            .iter()
            .filter(|r| r.kind == LogKind::Attempt)
            .filter_map(|r| r.pending)
            .collect()
    }
}

fn decoder_for(
    ctx: &GatewayContext,
    player_id: &str,
    preset: &Preset,
) -> gesture_ucb::Result<UserPerturbation> {
    let seed = mix_seed(&[player_seed(player_id), PURPOSE_DECODER]);
    UserPerturbation::sample(&ctx.world.prototypes, seed, preset.severity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gesture_ucb::MemoryStore;

    fn context(record: bool) -> Arc<GatewayContext> {
        let mut config = GatewayConfig::default();
        config.experiment.dim = 16;
        config.experiment.frames_per_second = 100.0;
        config.record_sessions = record;
        config.data_dir = std::env::temp_dir().join("gesture-ucb-session-tests");
        config.presets.push(Preset {
            name: "clean".into(),
            description: String::new(),
            severity: 0.0,
            path_length: 4,
            learning: true,
        });
        Arc::new(GatewayContext::new(config, Arc::new(MemoryStore::new())).unwrap())
    }

    fn handshake(config: &str) -> Handshake {
        Handshake {
            proto: PROTOCOL_VERSION,
            player_id: "alice".into(),
            config: config.into(),
        }
    }

    fn pending(s: &Session) -> Option<Gesture> {
        s.pipe.game().pending()
    }

    #[test]
    fn handshake_checks() {
        let ctx = context(false);
        let mut hs = handshake("clean");
        hs.proto = 2;
        assert!(matches!(Session::open(ctx.clone(), &hs), Err(SessionError::Version(2))));
        let hs = handshake("missing");
        assert!(matches!(Session::open(ctx.clone(), &hs), Err(SessionError::Protocol(_))));
        let mut hs = handshake("clean");
        hs.player_id = "../etc".into();
        assert!(matches!(Session::open(ctx, &hs), Err(SessionError::Protocol(_))));
    }

    #[test]
    fn clean_intent_advances() {
        let (mut s, opening) = Session::open(context(false), &handshake("clean")).unwrap();
        assert!(matches!(opening[0], ServerBody::Welcome { resumed: false, .. }));
        let want = pending(&s).unwrap();
        s.handle(ClientBody::Intent { gesture: want }).unwrap();
        let mut seen = Vec::new();
        for _ in 0..40 {
            seen.extend(s.tick().unwrap());
        }
        let emitted: Vec<_> = seen
            .iter()
            .filter_map(|m| match m {
                ServerBody::Emission { class, .. } => Some(*class),
                _ => None,
            })
            .collect();
        assert_eq!(emitted, vec![want]);
        assert!(seen.iter().any(|m| matches!(
            m,
            ServerBody::Reward {
                value: 1,
                credited: 1..,
                ..
            }
        )));
        assert_eq!(s.pipe.game().state().position, 1);
    }

    #[test]
    fn report_penalises_credit_window() {
        let (mut s, _) = Session::open(context(false), &handshake("clean")).unwrap();
        for _ in 0..3 {
            s.tick().unwrap();
        }
        let out = s.handle(ClientBody::Report).unwrap();
        let window = s.ctx.config.experiment.credit_window();
        assert!(out.iter().any(|m| matches!(
            m,
            ServerBody::Reward { value: -1, credited, .. } if *credited == window.min(3)
        )));
    }

    #[test]
    fn paused_session_does_not_advance() {
        let (mut s, _) = Session::open(context(false), &handshake("clean")).unwrap();
        s.handle(ClientBody::Pause).unwrap();
        assert!(s.tick().unwrap().is_empty());
        assert!(s
            .handle(ClientBody::Intent {
                gesture: Gesture::Up
            })
            .unwrap()
            .is_empty());
        assert_eq!(s.pipe.frames_seen(), 0);
        s.handle(ClientBody::Resume).unwrap();
        assert!(!s.tick().unwrap().is_empty());
    }

    #[test]
    fn start_during_round_is_a_violation() {
        let (mut s, _) = Session::open(context(false), &handshake("clean")).unwrap();
        assert!(matches!(
            s.handle(ClientBody::Start { config: None }),
            Err(SessionError::Protocol(_))
        ));
    }

    #[test]
    fn decoder_is_fixed_per_player() {
        let ctx = context(false);
        let a = decoder_for(&ctx, "alice", ctx.config.preset("hard").unwrap()).unwrap();
        let b = decoder_for(&ctx, "alice", ctx.config.preset("hard").unwrap()).unwrap();
        let c = decoder_for(&ctx, "bob", ctx.config.preset("hard").unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
