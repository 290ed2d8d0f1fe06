//! The 2-D navigation game: a fixed-length path of required gestures, a
//! character that only advances on the correct gesture, and the rewards the
//! bandit learns from.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::RewardSignal;
use crate::error::{Error, Result};

pub const N_GESTURES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    Up,
    Down,
    Left,
    Right,
    IndexPinch,
    ThumbTap,
}

impl Gesture {
    pub const ALL: [Gesture; N_GESTURES] = [
        Gesture::Up,
        Gesture::Down,
        Gesture::Left,
        Gesture::Right,
        Gesture::IndexPinch,
        Gesture::ThumbTap,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_action(self) -> bool {
        matches!(self, Gesture::IndexPinch | Gesture::ThumbTap)
    }

    pub fn opposite(self) -> Option<Self> {
        match self {
            Gesture::Up => Some(Gesture::Down),
            Gesture::Down => Some(Gesture::Up),
            Gesture::Left => Some(Gesture::Right),
            Gesture::Right => Some(Gesture::Left),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gesture::Up => "up",
            Gesture::Down => "down",
            Gesture::Left => "left",
            Gesture::Right => "right",
            Gesture::IndexPinch => "index_pinch",
            Gesture::ThumbTap => "thumb_tap",
        }
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gesture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown gesture {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSpec {
    pub cells: Vec<Gesture>,
    pub seed: u64,
}

impl PathSpec {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn class_counts(&self) -> [usize; N_GESTURES] {
        let mut counts = [0; N_GESTURES];
        for g in &self.cells {
            counts[g.index()] += 1;
        }
        counts
    }

    /// True when no directional cell undoes the previous directional move.
    pub fn has_no_reversals(&self) -> bool {
        let mut last_move: Option<Gesture> = None;
        for &g in &self.cells {
            if g.is_action() {
                continue;
            }
            if last_move.and_then(Gesture::opposite) == Some(g) {
                return false;
            }
            last_move = Some(g);
        }
        true
    }
}

/// Splits `total` into `parts` counts differing by at most one, with the
/// remainder assigned in a seed-dependent order.
fn even_split(total: usize, parts: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut counts = vec![total / parts; parts];
    let mut order: Vec<usize> = (0..parts).collect();
    for i in (1..parts).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &i in order.iter().take(total % parts) {
        counts[i] += 1;
    }
    counts
}

/// Pseudo-random path of exactly `length` cells. Action cells make up
/// `round(length · action_rate)` of the path, split evenly between pinch and
/// tap; the rest are split evenly across the four directions. Directional
/// cells never reverse the previous directional move.
pub fn generate_path(seed: u64, length: usize, action_rate: f64) -> Result<PathSpec> {
    if length == 0 {
        return Err(Error::InvalidValue("path length must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&action_rate) {
        return Err(Error::InvalidValue(format!(
            "action rate must be in [0, 1], got {action_rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_actions = ((length as f64) * action_rate).round() as usize;
    let mut remaining = [0usize; N_GESTURES];
    let mut dirs = even_split(length - n_actions, 4, &mut rng);
    // Exactly two opposite directions cannot be laid out without a reversal.
    let used: Vec<usize> = (0..4).filter(|&i| dirs[i] > 0).collect();
    if let [a, b] = used[..] {
        if a / 2 == b / 2 {
            dirs[(b + 2) % 4] = dirs[b];
            dirs[b] = 0;
        }
    }
    let acts = even_split(n_actions, 2, &mut rng);
    remaining[..4].copy_from_slice(&dirs);
    remaining[4..].copy_from_slice(&acts);

    // Weighted draw without replacement; restart on the rare dead end where
    // only the forbidden reversal is left.
    for _ in 0..10_000 {
        let mut left = remaining;
        let mut cells = Vec::with_capacity(length);
        let mut last_move: Option<Gesture> = None;
        let mut dead_end = false;
        for _ in 0..length {
            let forbidden = last_move.and_then(Gesture::opposite);
            let weight = |g: Gesture| {
                if Some(g) == forbidden {
                    0
                } else {
                    left[g.index()]
                }
            };
            let total: usize = Gesture::ALL.iter().map(|&g| weight(g)).sum();
            if total == 0 {
                dead_end = true;
                break;
            }
            let mut pick = rng.random_range(0..total);
            let mut chosen = Gesture::Up;
            for g in Gesture::ALL {
                let w = weight(g);
                if pick < w {
                    chosen = g;
                    break;
                }
                pick -= w;
            }
            left[chosen.index()] -= 1;
            if !chosen.is_action() {
                last_move = Some(chosen);
            }
            cells.push(chosen);
        }
        if !dead_end {
            return Ok(PathSpec { cells, seed });
        }
    }
    Err(Error::InvalidValue(format!(
        "could not lay out a reversal-free path of length {length}"
    )))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub position: usize,
    pub length: usize,
    pub completed: bool,
    pub advance_count: usize,
    pub spacebar_count: usize,
    pub emission_count: usize,
    pub pending: Option<Gesture>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Advanced,
    Ignored,
    UserReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameEvent {
    pub kind: EventKind,
    pub reward: Option<RewardSignal>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Game {
    path: PathSpec,
    state: GameState,
    penalize_wrong_emission: bool,
}

impl Game {
    pub fn new(path: PathSpec) -> Self {
        let state = GameState {
            position: 0,
            length: path.len(),
            completed: path.is_empty(),
            advance_count: 0,
            spacebar_count: 0,
            emission_count: 0,
            pending: path.cells.first().copied(),
        };
        Self {
            path,
            state,
            penalize_wrong_emission: false,
        }
    }

    /// Ablation: wrong-class emissions produce a −1 reward instead of none.
    pub fn with_wrong_emission_penalty(mut self, on: bool) -> Self {
        self.penalize_wrong_emission = on;
        self
    }

    pub fn path(&self) -> &PathSpec {
        &self.path
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn pending(&self) -> Option<Gesture> {
        self.state.pending
    }

    pub fn is_completed(&self) -> bool {
        self.state.completed
    }

    /// Applies one emission and/or spacebar press. A spacebar press takes
    /// precedence and leaves the character in place.
    pub fn step(&mut self, emitted: Option<Gesture>, spacebar: bool) -> Result<GameEvent> {
        if self.state.completed {
            return Err(Error::GameCompleted);
        }
        if emitted.is_some() {
            self.state.emission_count += 1;
        }
        if spacebar {
            self.state.spacebar_count += 1;
            return Ok(GameEvent {
                kind: EventKind::UserReport,
                reward: Some(RewardSignal::user_report()),
            });
        }
        match emitted {
            Some(g) if Some(g) == self.state.pending => {
                self.state.position += 1;
                self.state.advance_count += 1;
                self.state.pending = self.path.cells.get(self.state.position).copied();
                self.state.completed = self.state.position == self.path.len();
                Ok(GameEvent {
                    kind: EventKind::Advanced,
                    reward: Some(RewardSignal::advance()),
                })
            }
            Some(_) if self.penalize_wrong_emission => Ok(GameEvent {
                kind: EventKind::Ignored,
                reward: Some(RewardSignal::reject()),
            }),
            _ => Ok(GameEvent {
                kind: EventKind::Ignored,
                reward: None,
            }),
        }
    }
}

/// Behaviour of a simulated player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlayerPolicy {
    /// Frames after an attempt starts before an unanswered attempt is
    /// reported with the spacebar.
    pub report_timeout: u32,
    /// Attempts at a single cell before the player gives up on the round.
    pub retry_limit: u32,
    /// Minimum frames between the starts of consecutive attempts.
    pub cadence: u32,
}

impl SimPlayerPolicy {
    pub fn for_gesture_frames(gesture_frames: u32) -> Self {
        Self {
            report_timeout: gesture_frames,
            retry_limit: 40,
            cadence: gesture_frames + 2,
        }
    }

    pub fn validate(&self, gesture_frames: u32) -> Result<()> {
        if self.report_timeout < gesture_frames {
            return Err(Error::InvalidConfig(format!(
                "report_timeout {} shorter than gesture duration {gesture_frames}",
                self.report_timeout
            )));
        }
        if self.retry_limit == 0 {
            return Err(Error::InvalidConfig("retry_limit must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "gesture")]
pub enum PlayerAction {
    Attempt(Gesture),
    Wait,
    Spacebar,
}

/// One decision of the simulated player. `frames_since_attempt` counts
/// frames since the current attempt's gesture began (`None` before the
/// first attempt); `responded` is whether the character moved since then.
pub fn sim_player_step(
    policy: &SimPlayerPolicy,
    state: &GameState,
    frames_since_attempt: Option<u32>,
    responded: bool,
) -> PlayerAction {
    let Some(pending) = state.pending.filter(|_| !state.completed) else {
        return PlayerAction::Wait;
    };
    let Some(since) = frames_since_attempt else {
        return PlayerAction::Attempt(pending);
    };
    if responded {
        return if since >= policy.cadence {
            PlayerAction::Attempt(pending)
        } else {
            PlayerAction::Wait
        };
    }
    if since == policy.report_timeout {
        PlayerAction::Spacebar
    } else if since > policy.report_timeout && since >= policy.cadence {
        PlayerAction::Attempt(pending)
    } else {
        PlayerAction::Wait
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_of_sixty_is_balanced() {
        let p = generate_path(1, 60, 1.0 / 3.0).unwrap();
        assert_eq!(p.len(), 60);
        let counts = p.class_counts();
        assert_eq!(counts[4] + counts[5], 20);
        for c in counts {
            assert!((8..=12).contains(&c), "{counts:?}");
        }
        assert!(p.has_no_reversals());
        assert_eq!(p, generate_path(1, 60, 1.0 / 3.0).unwrap());
    }

    #[test]
    fn path_edge_cases() {
        let p = generate_path(5, 1, 1.0 / 3.0).unwrap();
        assert_eq!(p.len(), 1);
        let mut g = Game::new(p.clone());
        let ev = g.step(Some(p.cells[0]), false).unwrap();
        assert_eq!(ev.kind, EventKind::Advanced);
        assert!(g.is_completed());
        assert!(matches!(g.step(None, true), Err(Error::GameCompleted)));
        assert!(generate_path(1, 0, 0.3).is_err());
        assert!(generate_path(1, 10, 1.2).is_err());
        let all_actions = generate_path(2, 10, 1.0).unwrap();
        assert!(all_actions.cells.iter().all(|g| g.is_action()));
    }

    fn left_game() -> Game {
        Game::new(PathSpec {
            cells: vec![Gesture::Left, Gesture::Up],
            seed: 0,
        })
    }

    #[test]
    fn correct_emission_advances() {
        let mut g = left_game();
        let ev = g.step(Some(Gesture::Left), false).unwrap();
        assert_eq!(ev.kind, EventKind::Advanced);
        assert_eq!(ev.reward.unwrap().value(), 1);
        assert_eq!(g.state().position, 1);
        assert_eq!(g.pending(), Some(Gesture::Up));
    }

    #[test]
    fn wrong_emission_is_ignored() {
        let mut g = left_game();
        let ev = g.step(Some(Gesture::Right), false).unwrap();
        assert_eq!(ev.kind, EventKind::Ignored);
        assert!(ev.reward.is_none());
        assert_eq!(g.state().position, 0);
        assert_eq!(g.state().emission_count, 1);

        let mut g = left_game().with_wrong_emission_penalty(true);
        let ev = g.step(Some(Gesture::Right), false).unwrap();
        assert_eq!(ev.reward.unwrap().value(), -1);
    }

    #[test]
    fn spacebar_reports() {
        let mut g = left_game();
        let ev = g.step(None, true).unwrap();
        assert_eq!(ev.kind, EventKind::UserReport);
        assert_eq!(ev.reward.unwrap().value(), -1);
        assert_eq!(g.state().position, 0);
        assert_eq!(g.state().spacebar_count, 1);
    }

    #[test]
    fn player_policy() {
        let policy = SimPlayerPolicy {
            report_timeout: 4,
            retry_limit: 10,
            cadence: 6,
        };
        let state = left_game().state().clone();
        assert_eq!(
            sim_player_step(&policy, &state, None, false),
            PlayerAction::Attempt(Gesture::Left)
        );
        // responded: wait for cadence, then attempt the next cell
        assert_eq!(sim_player_step(&policy, &state, Some(2), true), PlayerAction::Wait);
        assert_eq!(
            sim_player_step(&policy, &state, Some(6), true),
            PlayerAction::Attempt(Gesture::Left)
        );
        // unresponded: exactly one spacebar at the timeout, then a retry
        let actions: Vec<_> = (0..8)
            .map(|t| sim_player_step(&policy, &state, Some(t), false))
            .collect();
        assert_eq!(
            actions.iter().filter(|a| **a == PlayerAction::Spacebar).count(),
            1
        );
        assert_eq!(actions[4], PlayerAction::Spacebar);
        assert_eq!(actions[5], PlayerAction::Wait);
        assert_eq!(actions[6], PlayerAction::Attempt(Gesture::Left));
        // response just before the timeout suppresses the report
        assert_eq!(sim_player_step(&policy, &state, Some(4), true), PlayerAction::Wait);
    }
}
