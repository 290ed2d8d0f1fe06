//! Contextual LinUCB layer on top of a frozen population classifier.
//!
//! Each gesture class is an arm with its own ridge statistics `(A, b)`.
//! Arms are scored as
//!
//! ```text
//! p_i = prob_i + (A_i⁻¹ b_i)ᵀ e + α · sqrt(eᵀ A_i⁻¹ e)
//! ```
//!
//! so a fresh model (A = I, b = 0) reproduces the population argmax and the
//! bandit only departs from it as rewards accumulate. A reward is credited
//! to the most recent `credit_window` pulls, each pull at most once.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_RECOMPUTE_INTERVAL: u32 = 256;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_DIM: usize = 64;

/// Latent context vector taken before the population classification layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension("empty embedding".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "embedding element {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Per-class probabilities from the frozen head. Elements lie in `[0, 1]`;
/// the sum may be below one when the activity factor scales it down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDimension("empty probability vector".into()));
        }
        if let Some(i) = probs
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::InvalidValue(format!(
                "probability {i} = {} outside [0, 1]",
                probs[i]
            )));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Ridge statistics for one arm. `a_inv` is maintained by rank-one updates
/// and refreshed from `a` every `recompute_interval` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    d: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    a_inv: Vec<f64>,
    updates_since_recompute: u32,
}

impl ArmState {
    fn fresh(d: usize) -> Self {
        Self {
            d,
            a: linalg::identity(d),
            b: vec![0.0; d],
            a_inv: linalg::identity(d),
            updates_since_recompute: 0,
        }
    }

    pub fn design(&self) -> &[f64] {
        &self.a
    }

    pub fn rewards(&self) -> &[f64] {
        &self.b
    }

    pub fn inverse(&self) -> &[f64] {
        &self.a_inv
    }

    pub fn updates_since_recompute(&self) -> u32 {
        self.updates_since_recompute
    }

    /// `A⁻¹ b`.
    pub fn theta(&self) -> Vec<f64> {
        linalg::mat_vec(&self.a_inv, &self.b)
    }

    /// Returns `(θᵀe, eᵀA⁻¹e)` using `scratch` for `A⁻¹e`.
    fn evaluate(&self, e: &[f64], scratch: &mut [f64]) -> (f64, f64) {
        linalg::mat_vec_into(&self.a_inv, e, scratch);
        // A⁻¹ is symmetric, so θᵀe = bᵀA⁻¹e.
        let estimate = linalg::dot(&self.b, scratch);
        let variance = linalg::dot(e, scratch).max(0.0);
        (estimate, variance)
    }

    fn update(&mut self, e: &[f64], reward: f64, recompute_interval: u32) {
        let d = self.d;
        for i in 0..d {
            let ei = e[i];
            if ei != 0.0 {
                for j in 0..d {
                    self.a[i * d + j] += ei * e[j];
                }
            }
            self.b[i] += reward * ei;
        }

        self.updates_since_recompute += 1;
        if self.updates_since_recompute >= recompute_interval {
            self.recompute();
            return;
        }

        // Sherman–Morrison: (A + eeᵀ)⁻¹ = A⁻¹ − (A⁻¹e)(A⁻¹e)ᵀ / (1 + eᵀA⁻¹e)
        let v = linalg::mat_vec(&self.a_inv, e);
        let denom = 1.0 + linalg::dot(e, &v);
        for i in 0..d {
            let vi = v[i] / denom;
            for j in 0..d {
                self.a_inv[i * d + j] -= vi * v[j];
            }
        }
    }

    fn recompute(&mut self) {
        // A = I + Σ eeᵀ is SPD by construction; failure means non-finite input.
        self.a_inv = linalg::spd_inverse(&self.a, self.d)
            .expect("arm design matrix lost positive definiteness");
        self.updates_since_recompute = 0;
    }
}

/// One arm pull remembered for delayed credit assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PullRecord {
    pub step: u64,
    pub arm: usize,
    pub embedding: Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// The system observed the emitted gesture advance the game.
    SystemAdvance,
    /// The user reported an unresponsive gesture.
    UserReport,
    /// A wrong emission, only produced when `penalize_wrong_emission` is set.
    SystemReject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub source: RewardSource,
}

impl RewardSignal {
    pub const fn advance() -> Self {
        Self {
            source: RewardSource::SystemAdvance,
        }
    }

    pub const fn user_report() -> Self {
        Self {
            source: RewardSource::UserReport,
        }
    }

    pub const fn reject() -> Self {
        Self {
            source: RewardSource::SystemReject,
        }
    }

    pub fn value(&self) -> i8 {
        match self.source {
            RewardSource::SystemAdvance => 1,
            RewardSource::UserReport | RewardSource::SystemReject => -1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditModel {
    arms: Vec<ArmState>,
    alpha: f64,
    d: usize,
    credit_window: usize,
    recompute_interval: u32,
    history: VecDeque<PullRecord>,
    step: u64,
}

impl BanditModel {
    pub fn new(d: usize, n_arms: usize, alpha: f64, credit_window: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension("d must be >= 1".into()));
        }
        if n_arms < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 arms, got {n_arms}"
            )));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidValue(format!("alpha must be >= 0, got {alpha}")));
        }
        if credit_window == 0 {
            return Err(Error::InvalidValue("credit window must be >= 1".into()));
        }
        Ok(Self {
            arms: (0..n_arms).map(|_| ArmState::fresh(d)).collect(),
            alpha,
            d,
            credit_window,
            recompute_interval: DEFAULT_RECOMPUTE_INTERVAL,
            history: VecDeque::with_capacity(credit_window),
            step: 0,
        })
    }

    pub fn with_recompute_interval(mut self, interval: u32) -> Result<Self> {
        if interval == 0 {
            return Err(Error::InvalidValue("recompute interval must be >= 1".into()));
        }
        self.recompute_interval = interval;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn credit_window(&self) -> usize {
        self.credit_window
    }

    pub fn recompute_interval(&self) -> u32 {
        self.recompute_interval
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn arm(&self, arm: usize) -> Result<&ArmState> {
        self.arms.get(arm).ok_or(Error::IndexOutOfRange {
            what: "arm",
            index: arm,
            len: self.arms.len(),
        })
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &PullRecord> {
        self.history.iter()
    }

    /// Drops pending pull records; rewards never span a session boundary.
    pub fn clear_history(&mut self) {
        self.history.clear();
    }

    fn check_inputs(&self, e: &Embedding, prob: &ProbVector) -> Result<()> {
        if e.dim() != self.d {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: self.d,
                got: e.dim(),
            });
        }
        if prob.len() != self.arms.len() {
            return Err(Error::DimensionMismatch {
                what: "probability vector",
                expected: self.arms.len(),
                got: prob.len(),
            });
        }
        Ok(())
    }

    /// Upper confidence scores for every arm. Pure.
    pub fn score(&self, e: &Embedding, prob: &ProbVector) -> Result<Vec<f64>> {
        self.check_inputs(e, prob)?;
        let mut scratch = vec![0.0; self.d];
        Ok(self
            .arms
            .iter()
            .zip(prob.as_slice())
            .map(|(arm, p)| {
                let (estimate, variance) = arm.evaluate(e.as_slice(), &mut scratch);
                p + estimate + self.alpha * variance.sqrt()
            })
            .collect())
    }

    /// Scores, selects the best arm (lowest index on ties) and remembers
    /// the pull for credit assignment.
    pub fn pull(&mut self, e: &Embedding, prob: &ProbVector) -> Result<(usize, Vec<f64>)> {
        let scores = self.score(e, prob)?;
        let arm = argmax(&scores);
        if self.history.len() == self.credit_window {
            self.history.pop_front();
        }
        self.history.push_back(PullRecord {
            step: self.step,
            arm,
            embedding: e.clone(),
        });
        self.step += 1;
        Ok((arm, scores))
    }

    /// Credits `r` to the most recent pulls (up to the credit window) and
    /// consumes them. Returns the number of records updated.
    pub fn apply_reward(&mut self, r: RewardSignal) -> usize {
        let reward = f64::from(r.value());
        let take = self.credit_window.min(self.history.len());
        for _ in 0..take {
            let record = self.history.pop_back().expect("length checked");
            self.arms[record.arm].update(
                record.embedding.as_slice(),
                reward,
                self.recompute_interval,
            );
        }
        take
    }

    pub fn theta(&self, arm: usize) -> Result<Vec<f64>> {
        Ok(self.arm(arm)?.theta())
    }

    /// `α · sqrt(eᵀ A_i⁻¹ e)` for one arm.
    pub fn uncertainty(&self, arm: usize, e: &Embedding) -> Result<f64> {
        let state = self.arm(arm)?;
        if e.dim() != self.d {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: self.d,
                got: e.dim(),
            });
        }
        let mut scratch = vec![0.0; self.d];
        let (_, variance) = state.evaluate(e.as_slice(), &mut scratch);
        Ok(self.alpha * variance.sqrt())
    }

    pub fn snapshot(&self) -> SnapshotDocument {
        SnapshotDocument {
            version: SNAPSHOT_VERSION,
            d: self.d,
            n_arms: self.arms.len(),
            alpha: self.alpha,
            credit_window: Some(self.credit_window),
            recompute_interval: Some(self.recompute_interval),
            arms: self
                .arms
                .iter()
                .map(|arm| ArmDocument {
                    a: arm.a.clone(),
                    b: arm.b.clone(),
                    a_inv: Some(arm.a_inv.clone()),
                    updates_since_recompute: Some(arm.updates_since_recompute),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    /// Rebuilds a model from a snapshot. History is not persisted.
    pub fn restore(doc: &SnapshotDocument) -> Result<Self> {
        if doc.version != SNAPSHOT_VERSION {
            return Err(Error::VersionMismatch {
                expected: SNAPSHOT_VERSION,
                found: doc.version,
            });
        }
        let d = doc.d;
        let credit_window = doc.credit_window.unwrap_or(1);
        let mut model = Self::new(d, doc.n_arms, doc.alpha, credit_window)
            .map_err(|e| Error::CorruptDocument(e.to_string()))?;
        if let Some(interval) = doc.recompute_interval {
            model = model
                .with_recompute_interval(interval)
                .map_err(|e| Error::CorruptDocument(e.to_string()))?;
        }
        if doc.arms.len() != doc.n_arms {
            return Err(Error::CorruptDocument(format!(
                "n_arms = {} but {} arms present",
                doc.n_arms,
                doc.arms.len()
            )));
        }
        for (i, (slot, arm)) in model.arms.iter_mut().zip(&doc.arms).enumerate() {
            *slot = arm.to_state(d).map_err(|msg| {
                Error::CorruptDocument(format!("arm {i}: {msg}"))
            })?;
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptDocument(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::CorruptDocument("missing version".into()))?;
        if version != u64::from(SNAPSHOT_VERSION) {
            return Err(Error::VersionMismatch {
                expected: SNAPSHOT_VERSION,
                found: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        let doc: SnapshotDocument =
            serde_json::from_value(value).map_err(|e| Error::CorruptDocument(e.to_string()))?;
        Self::restore(&doc)
    }
}

/// Versioned, JSON-serializable bandit state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDocument {
    pub version: u32,
    pub d: usize,
    pub n_arms: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credit_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recompute_interval: Option<u32>,
    pub arms: Vec<ArmDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmDocument {
    /// Row-major `d × d` design matrix.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Cached inverse; recomputed from `A` when absent or inconsistent.
    #[serde(rename = "A_inv", default, skip_serializing_if = "Option::is_none")]
    pub a_inv: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updates_since_recompute: Option<u32>,
}

impl ArmDocument {
    fn to_state(&self, d: usize) -> std::result::Result<ArmState, String> {
        if self.a.len() != d * d {
            return Err(format!("A has {} entries, expected {}", self.a.len(), d * d));
        }
        if self.b.len() != d {
            return Err(format!("b has {} entries, expected {d}", self.b.len()));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        let scale = self.a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if linalg::max_asymmetry(&self.a, d) > 1e-12 * scale {
            return Err("A is not symmetric".into());
        }
        let cached = self.a_inv.as_ref().filter(|inv| {
            inv.len() == d * d
                && inv.iter().all(|v| v.is_finite())
                && linalg::identity_residual(&self.a, inv, d) <= 1e-8
        });
        let a_inv = match cached {
            Some(inv) => inv.clone(),
            None => linalg::spd_inverse(&self.a, d).ok_or("A is not positive definite")?,
        };
        Ok(ArmState {
            d,
            a: self.a.clone(),
            b: self.b.clone(),
            a_inv,
            updates_since_recompute: if cached.is_some() {
                self.updates_since_recompute.unwrap_or(0)
            } else {
                0
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn probs(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fresh_model_is_identity() {
        let m = BanditModel::new(2, 6, 0.5, 4).unwrap();
        assert_eq!(m.n_arms(), 6);
        for arm in m.arms() {
            assert_eq!(arm.design(), &[1.0, 0.0, 0.0, 1.0]);
            assert_eq!(arm.rewards(), &[0.0, 0.0]);
            assert_eq!(arm.inverse(), &[1.0, 0.0, 0.0, 1.0]);
        }
        assert_eq!(m.theta(3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.history().len(), 0);
        assert_eq!(m.step(), 0);
        let e = emb(&[3.0, 4.0]);
        for i in 0..6 {
            assert_eq!(m.uncertainty(i, &e).unwrap(), 2.5);
        }
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            BanditModel::new(0, 6, 1.0, 1),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            BanditModel::new(4, 1, 1.0, 1),
            Err(Error::InvalidDimension(_))
        ));
        assert!(BanditModel::new(4, 6, -0.1, 1).is_err());
        assert!(BanditModel::new(4, 6, 1.0, 0).is_err());
    }

    #[test]
    fn fresh_scores() {
        let m = BanditModel::new(2, 6, 0.5, 4).unwrap();
        let s = m.score(&emb(&[3.0, 4.0]), &probs(&[0.1; 6])).unwrap();
        for v in s {
            assert!((v - 2.6).abs() < 1e-15);
        }
        let m0 = BanditModel::new(2, 6, 0.0, 4).unwrap();
        let p = probs(&[0.1, 0.7, 0.05, 0.05, 0.05, 0.05]);
        assert_eq!(m0.score(&emb(&[3.0, 4.0]), &p).unwrap(), p.as_slice());
    }

    #[test]
    fn single_update_by_hand() {
        let mut m = BanditModel::new(2, 6, 1.0, 4).unwrap();
        m.history.push_back(PullRecord {
            step: 0,
            arm: 2,
            embedding: emb(&[1.0, 0.0]),
        });
        assert_eq!(m.apply_reward(RewardSignal::advance()), 1);
        let arm = m.arm(2).unwrap();
        assert_eq!(arm.design(), &[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(arm.rewards(), &[1.0, 0.0]);
        assert_eq!(m.theta(2).unwrap(), vec![0.5, 0.0]);
        for i in [0, 1, 3, 4, 5] {
            assert_eq!(m.arm(i).unwrap().design(), &[1.0, 0.0, 0.0, 1.0]);
        }
        // 0.5 + sqrt(0.5)
        let s = m.score(&emb(&[1.0, 0.0]), &probs(&[0.0; 6])).unwrap();
        assert!((s[2] - 1.207_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn negative_update_flips_sign() {
        let mut m = BanditModel::new(2, 6, 1.0, 4).unwrap();
        m.history.push_back(PullRecord {
            step: 0,
            arm: 2,
            embedding: emb(&[1.0, 0.0]),
        });
        m.apply_reward(RewardSignal::user_report());
        assert_eq!(m.arm(2).unwrap().rewards(), &[-1.0, 0.0]);
        assert_eq!(m.theta(2).unwrap(), vec![-0.5, 0.0]);
    }

    #[test]
    fn pull_tie_breaks_low() {
        let mut m = BanditModel::new(2, 3, 0.0, 2).unwrap();
        let (arm, _) = m.pull(&emb(&[1.0, 1.0]), &probs(&[0.2, 0.4, 0.4])).unwrap();
        assert_eq!(arm, 1);
        assert_eq!(m.step(), 1);
        assert_eq!(m.history().len(), 1);
    }

    #[test]
    fn history_is_bounded_and_consumed_once() {
        let mut m = BanditModel::new(2, 3, 1.0, 3).unwrap();
        for _ in 0..5 {
            m.pull(&emb(&[1.0, 0.0]), &probs(&[0.5, 0.2, 0.1])).unwrap();
        }
        assert_eq!(m.history().len(), 3);
        let steps: Vec<u64> = m.history().map(|r| r.step).collect();
        assert_eq!(steps, vec![2, 3, 4]);
        assert_eq!(m.apply_reward(RewardSignal::advance()), 3);
        assert_eq!(m.apply_reward(RewardSignal::advance()), 0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = BanditModel::new(3, 6, 1.0, 1).unwrap();
        assert!(matches!(
            m.score(&emb(&[1.0, 2.0]), &probs(&[0.1; 6])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.score(&emb(&[1.0, 2.0, 3.0]), &probs(&[0.1; 5])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(m.theta(6).is_err());
    }

    #[test]
    fn embedding_and_probs_validate() {
        assert!(Embedding::new(vec![1.0, f64::NAN]).is_err());
        assert!(Embedding::new(vec![f64::INFINITY]).is_err());
        assert!(ProbVector::new(vec![0.5, 1.2]).is_err());
        assert!(ProbVector::new(vec![-0.1, 0.2]).is_err());
        assert!(serde_json::from_str::<ProbVector>("[0.5, 2.0]").is_err());
    }

    #[test]
    fn snapshot_version_and_truncation() {
        let m = BanditModel::new(3, 4, 0.7, 2).unwrap();
        let json = m.to_json();
        let cut = &json[..json.len() / 2];
        assert!(matches!(
            BanditModel::from_json(cut),
            Err(Error::CorruptDocument(_))
        ));
        let bumped = json.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            BanditModel::from_json(&bumped),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn snapshot_without_cached_inverse_recomputes() {
        let mut m = BanditModel::new(2, 2, 1.0, 1).unwrap();
        m.pull(&emb(&[1.0, 2.0]), &probs(&[0.6, 0.4])).unwrap();
        m.apply_reward(RewardSignal::advance());
        let mut doc = m.snapshot();
        for arm in &mut doc.arms {
            arm.a_inv = None;
        }
        let r = BanditModel::restore(&doc).unwrap();
        assert_eq!(r.arm(0).unwrap().design(), m.arm(0).unwrap().design());
        let residual =
            linalg::identity_residual(r.arm(0).unwrap().design(), r.arm(0).unwrap().inverse(), 2);
        assert!(residual < 1e-12);
    }

    #[test]
    fn snapshot_rejects_bad_shapes() {
        let m = BanditModel::new(2, 2, 1.0, 1).unwrap();
        let mut doc = m.snapshot();
        doc.arms[1].b.push(0.0);
        assert!(matches!(
            BanditModel::restore(&doc),
            Err(Error::CorruptDocument(_))
        ));
        let mut doc = m.snapshot();
        doc.arms.pop();
        assert!(BanditModel::restore(&doc).is_err());
        let mut doc = m.snapshot();
        doc.arms[0].a[1] = 0.5;
        assert!(BanditModel::restore(&doc).is_err());
    }
}
