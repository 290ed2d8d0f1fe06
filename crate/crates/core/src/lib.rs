//! Calibration-free personalization of a frozen gesture classifier.
//!
//! A per-class LinUCB bandit re-ranks the population model's class
//! probabilities using the model's embedding as context. Rewards come from
//! the interaction itself: a gesture that moves the game character forward
//! is a positive reward, a user report of a missed gesture a negative one.
//!
//! The crate also contains everything needed to exercise the learner in
//! closed loop: a synthetic embedding source with per-user distribution
//! shift, a threshold post-processor, a navigation game, a simulated player
//! and an experiment harness.

pub mod bandit;
pub mod config;
pub mod context;
pub mod error;
pub mod game;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod replay;
pub mod store;

pub use bandit::{
    argmax, ArmState, BanditModel, Embedding, ProbVector, PullRecord, RewardSignal, RewardSource,
    SnapshotDocument,
};
pub use config::{ExperimentConfig, RoundSpec, SeedRange, SeverityMode};
pub use context::{Frame, Phase, PopulationHead, UserPerturbation};
pub use error::{Error, Result};
pub use game::{Game, GameEvent, GameState, Gesture, PathSpec, N_GESTURES};
pub use metrics::{MetricsReport, TrialRecord};
pub use pipeline::{EventRecord, FrameOutcome, LogKind, Pipeline, RecordedFrame};
pub use postprocess::{PostProcessConfig, PostProcessState};
pub use replay::{replay_open, write_replay, ReplayHeader, ReplayReader, SessionHeader};
pub use store::{FileStore, MemoryStore, SnapshotStore};
