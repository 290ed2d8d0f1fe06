//! One frame of the closed loop: pull, post-process, game step, reward.
//!
//! The simulation harness and the live gateway both drive this type, so a
//! recorded live session replays to the same emissions and rewards.
//!
//! User reports are input events between frames: [`Pipeline::report`]
//! credits the pulls of the frames before it, while an emission that
//! advances the game credits the pulls up to and including its own frame.

use serde::{Deserialize, Serialize};

use crate::bandit::BanditModel;
use crate::context::Frame;
use crate::error::{Error, Result};
use crate::game::{EventKind, Game, GameEvent, Gesture, N_GESTURES};
use crate::postprocess::{PostProcessConfig, PostProcessState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    /// The player started a gesture for the pending cell.
    Attempt,
    Advanced,
    Ignored,
    UserReport,
}

impl From<EventKind> for LogKind {
    fn from(kind: EventKind) -> Self {
        match kind {
            EventKind::Advanced => LogKind::Advanced,
            EventKind::Ignored => LogKind::Ignored,
            EventKind::UserReport => LogKind::UserReport,
        }
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: u64,
    pub pending: Option<Gesture>,
    pub emitted: Option<Gesture>,
    pub kind: LogKind,
    pub reward: Option<i8>,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutcome {
    pub arm: usize,
    pub scores: Vec<f64>,
    pub emitted: Option<Gesture>,
    pub event: Option<GameEvent>,
    /// Pull records updated by this frame's reward.
    pub credited: usize,
}

/// A frame as fed to the pipeline, with whether a report preceded it.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedFrame {
    pub frame: Frame,
    /// Reports received since the previous frame.
    pub reports_before: u32,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    bandit: BanditModel,
    post: PostProcessState,
    game: Game,
    learning: bool,
    t: u64,
    log: Vec<EventRecord>,
    recording: Option<Vec<RecordedFrame>>,
    reports_pending: u32,
}

impl Pipeline {
    pub fn new(
        bandit: BanditModel,
        post: PostProcessConfig,
        game: Game,
        learning: bool,
    ) -> Result<Self> {
        if bandit.n_arms() != N_GESTURES {
            return Err(Error::DimensionMismatch {
                what: "bandit arms",
                expected: N_GESTURES,
                got: bandit.n_arms(),
            });
        }
        Ok(Self {
            bandit,
            post: PostProcessState::new(post, N_GESTURES)?,
            game,
            learning,
            t: 0,
            log: Vec::new(),
            recording: None,
            reports_pending: 0,
        })
    }

    /// Keeps every frame and report so the session can be replayed. A report
    /// is stored with the frame after it, so reports after the last frame
    /// are not kept.
    pub fn with_recording(mut self) -> Self {
        self.recording = Some(Vec::new());
        self
    }

    pub fn bandit(&self) -> &BanditModel {
        &self.bandit
    }

    pub fn into_bandit(self) -> BanditModel {
        self.bandit
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    pub fn learning(&self) -> bool {
        self.learning
    }

    pub fn frames_seen(&self) -> u64 {
        self.t
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn recording(&self) -> Option<&[RecordedFrame]> {
        self.recording.as_deref()
    }

    pub fn mark_attempt(&mut self, gesture: Gesture) {
        self.log.push(EventRecord {
            t: self.t,
            pending: Some(gesture),
            emitted: None,
            kind: LogKind::Attempt,
            reward: None,
            position: self.game.state().position,
        });
    }

    fn record_event(&mut self, pending: Option<Gesture>, emitted: Option<Gesture>, ev: &GameEvent) {
        self.log.push(EventRecord {
            t: self.t,
            pending,
            emitted,
            kind: ev.kind.into(),
            reward: ev.reward.map(|r| r.value()),
            position: self.game.state().position,
        });
    }

    fn credit(&mut self, ev: &GameEvent) -> usize {
        match ev.reward {
            Some(r) if self.learning => self.bandit.apply_reward(r),
            _ => 0,
        }
    }

    /// Spacebar press arriving before the next frame.
    pub fn report(&mut self) -> Result<(GameEvent, usize)> {
        let pending = self.game.pending();
        let ev = self.game.step(None, true)?;
        self.record_event(pending, None, &ev);
        self.reports_pending += 1;
        let credited = self.credit(&ev);
        Ok((ev, credited))
    }

    pub fn frame(&mut self, frame: &Frame) -> Result<FrameOutcome> {
        let (arm, scores) = self.bandit.pull(&frame.embedding, &frame.prob)?;
        let class = self.post.step(arm, &frame.prob)?;
        let emitted = class.and_then(Gesture::from_index);
        let mut event = None;
        let mut credited = 0;
        if emitted.is_some() && !self.game.is_completed() {
            let pending = self.game.pending();
            let ev = self.game.step(emitted, false)?;
            self.record_event(pending, emitted, &ev);
            credited = self.credit(&ev);
            event = Some(ev);
        }
        if let Some(rec) = self.recording.as_mut() {
            rec.push(RecordedFrame {
                frame: frame.clone(),
                reports_before: self.reports_pending,
            });
        }
        self.reports_pending = 0;
        self.t += 1;
        Ok(FrameOutcome {
            arm,
            scores,
            emitted,
            event,
            credited,
        })
    }
}
