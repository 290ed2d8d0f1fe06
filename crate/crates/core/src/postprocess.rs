//! Turns per-frame arm pulls into discrete gesture events.
//!
//! Summed class probability acts as an activity detector: while the maximum
//! over the last `window` sums exceeds `tau_b`, pulled arms are collected as
//! one-hot votes. The vote mean is taken over the full window length, so a
//! class needs more than `tau_e · window` votes before it is emitted. An
//! emission clears the votes and starts a refractory period during which
//! frames neither vote nor emit.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bandit::ProbVector;
use crate::error::{Error, Result};

/// Frames covering `millis` at `fps`, at least one.
pub fn frames_for_millis(millis: f64, fps: f64) -> usize {
    ((millis * fps / 1000.0).round() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub tau_b: f64,
    pub tau_e: f64,
    pub window_frames: usize,
    pub refractory_frames: usize,
}

impl PostProcessConfig {
    /// Defaults for a given frame rate: a 40 ms window and an equal
    /// refractory period.
    pub fn for_fps(fps: f64) -> Self {
        let window = frames_for_millis(40.0, fps);
        Self {
            tau_b: 0.5,
            tau_e: 0.5,
            window_frames: window,
            refractory_frames: window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_b > 0.0) || !self.tau_b.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "postprocess.tau_b must be > 0, got {}",
                self.tau_b
            )));
        }
        if !(self.tau_e > 0.0 && self.tau_e <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "postprocess.tau_e must be in (0, 1], got {}",
                self.tau_e
            )));
        }
        if self.window_frames == 0 {
            return Err(Error::InvalidConfig(
                "postprocess.window_frames must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self::for_fps(25.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostProcessState {
    config: PostProcessConfig,
    n_classes: usize,
    prob_buffer: VecDeque<f64>,
    arm_buffer: VecDeque<usize>,
    votes: Vec<usize>,
    refractory_remaining: usize,
}

impl PostProcessState {
    pub fn new(config: PostProcessConfig, n_classes: usize) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        let w = config.window_frames;
        Ok(Self {
            config,
            n_classes,
            prob_buffer: VecDeque::with_capacity(w),
            arm_buffer: VecDeque::with_capacity(w),
            votes: vec![0; n_classes],
            refractory_remaining: 0,
        })
    }

    pub fn config(&self) -> &PostProcessConfig {
        &self.config
    }

    pub fn refractory_remaining(&self) -> usize {
        self.refractory_remaining
    }

    pub fn prob_buffer(&self) -> impl ExactSizeIterator<Item = &f64> {
        self.prob_buffer.iter()
    }

    /// Current votes as one-hot rows, oldest first.
    pub fn arm_buffer(&self) -> Vec<Vec<f64>> {
        self.arm_buffer
            .iter()
            .map(|&arm| {
                let mut row = vec![0.0; self.n_classes];
                row[arm] = 1.0;
                row
            })
            .collect()
    }

    /// Vote fractions `m_i = count_i / window`.
    pub fn vote_mean(&self) -> Vec<f64> {
        let w = self.config.window_frames as f64;
        self.votes.iter().map(|&c| c as f64 / w).collect()
    }

    fn clear_votes(&mut self) {
        self.arm_buffer.clear();
        self.votes.iter_mut().for_each(|v| *v = 0);
    }

    pub fn reset(&mut self) {
        self.prob_buffer.clear();
        self.clear_votes();
        self.refractory_remaining = 0;
    }

    pub fn step(&mut self, arm: usize, prob: &ProbVector) -> Result<Option<usize>> {
        if prob.len() != self.n_classes {
            return Err(Error::DimensionMismatch {
                what: "probability vector",
                expected: self.n_classes,
                got: prob.len(),
            });
        }
        self.step_summed(arm, prob.sum())
    }

    /// Same as [`step`](Self::step) with the probability already summed.
    pub fn step_summed(&mut self, arm: usize, prob_sum: f64) -> Result<Option<usize>> {
        if arm >= self.n_classes {
            return Err(Error::IndexOutOfRange {
                what: "arm",
                index: arm,
                len: self.n_classes,
            });
        }
        let w = self.config.window_frames;
        let refractory = self.refractory_remaining > 0;
        if refractory {
            self.refractory_remaining -= 1;
        }

        if self.prob_buffer.len() == w {
            self.prob_buffer.pop_front();
        }
        self.prob_buffer.push_back(prob_sum);

        let active = self
            .prob_buffer
            .iter()
            .any(|&p| p > self.config.tau_b);
        if !active {
            self.clear_votes();
            return Ok(None);
        }
        if refractory {
            return Ok(None);
        }

        if self.arm_buffer.len() == w {
            let old = self.arm_buffer.pop_front().expect("non-empty");
            self.votes[old] -= 1;
        }
        self.arm_buffer.push_back(arm);
        self.votes[arm] += 1;

        let threshold = self.config.tau_e * w as f64;
        if !self.votes.iter().any(|&c| c as f64 > threshold) {
            return Ok(None);
        }
        let mut class = 0;
        for (i, &c) in self.votes.iter().enumerate().skip(1) {
            if c > self.votes[class] {
                class = i;
            }
        }
        self.clear_votes();
        self.refractory_remaining = self.config.refractory_frames;
        Ok(Some(class))
    }
}
