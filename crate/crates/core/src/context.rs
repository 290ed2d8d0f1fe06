//! Synthetic stand-in for a frozen population gesture model.
//!
//! Gesture classes are Gaussian clusters around orthonormal prototypes. The
//! frozen head is a nearest-centroid softmax whose output is scaled by an
//! activity factor (a logistic function of the distance from the rest
//! center), so resting frames carry little total probability. Individual
//! users are modelled as a fixed transform `x ↦ gain · Q x + shift` applied
//! to the population-space sample, with `Q` orthogonal; its magnitude is
//! controlled by a single severity knob in `[0, 1]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bandit::{argmax, Embedding, ProbVector};
use crate::error::{Error, Result};
use crate::linalg;

/// Norm of every class prototype.
pub const PROTOTYPE_RADIUS: f64 = 1.0;
const REST_CENTER_NORM: f64 = 0.1;
/// Expected norm of the active-frame noise vector at zero severity.
const ACTIVE_NOISE_NORM: f64 = 0.3;
const REST_NOISE_NORM: f64 = 0.15;
const LOGIT_SCALE: f64 = 8.0;
/// Softmax temperature of the head; keeps the warm-start probabilities of
/// confusable classes within reach of the bandit's reward scale.
const HEAD_TEMPERATURE: f64 = 4.0;
const ACTIVITY_GAIN: f64 = 12.0;
const ACTIVITY_RADIUS: f64 = 0.5;
const MAX_ROTATION: f64 = std::f64::consts::FRAC_PI_2;

pub const SELF_CHECK_FRAMES: usize = 10_000;
pub const SELF_CHECK_ACCURACY: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Rest,
    Active,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub embedding: Embedding,
    pub prob: ProbVector,
    /// Intended gesture, `None` at rest or when unknown.
    pub label: Option<usize>,
    pub phase: Phase,
}

/// Frozen linear classification layer plus activity scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationHead {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    temperature: f64,
    rest_center: Vec<f64>,
    activity_gain: f64,
    activity_radius: f64,
}

impl PopulationHead {
    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.bias.len().max(self.rest_center.len())
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn activity(&self, e: &[f64]) -> f64 {
        let dist = e
            .iter()
            .zip(&self.rest_center)
            .map(|(x, c)| (x - c) * (x - c))
            .sum::<f64>()
            .sqrt();
        1.0 / (1.0 + (-self.activity_gain * (dist - self.activity_radius)).exp())
    }

    /// Activity-scaled softmax over the class logits.
    pub fn probs(&self, e: &Embedding) -> Result<ProbVector> {
        let x = e.as_slice();
        if x.len() != self.rest_center.len() {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: self.rest_center.len(),
                got: x.len(),
            });
        }
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| (linalg::dot(w, x) + b) / self.temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let activity = self.activity(x);
        ProbVector::new(
            exps.iter()
                .map(|v| (v / total * activity).clamp(0.0, 1.0))
                .collect(),
        )
    }
}

/// Class centers and noise scales of the population embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GesturePrototypes {
    pub means: Vec<Vec<f64>>,
    /// Per-dimension standard deviation of active-frame noise.
    pub covariance_scale: f64,
    pub rest_mean: Vec<f64>,
    pub rest_scale: f64,
}

impl GesturePrototypes {
    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.rest_mean.len()
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.means.len() {
            for j in (i + 1)..self.means.len() {
                let d: f64 = self.means[i]
                    .iter()
                    .zip(&self.means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn scaled_unit(rng: &mut impl Rng, d: usize, norm: f64) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        let n = linalg::norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}

/// Builds a population head and prototypes from `seed`, and verifies that
/// an unperturbed user is classified correctly on at least 95% of frames.
pub fn synth_population(
    seed: u64,
    d: usize,
    n: usize,
) -> Result<(PopulationHead, GesturePrototypes)> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least 2 classes, got {n}"
        )));
    }
    if d < n {
        return Err(Error::InvalidDimension(format!(
            "embedding dimension {d} is smaller than class count {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Gram–Schmidt on Gaussian draws: pairwise separation is exactly √2·R.
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n);
    while means.len() < n {
        let mut v = gaussian_vec(&mut rng, d);
        for m in &means {
            let proj = linalg::dot(&v, m) / (PROTOTYPE_RADIUS * PROTOTYPE_RADIUS);
            v.iter_mut().zip(m).for_each(|(x, mi)| *x -= proj * mi);
        }
        let norm = linalg::norm(&v);
        if norm > 1e-6 {
            means.push(v.into_iter().map(|x| x * PROTOTYPE_RADIUS / norm).collect());
        }
    }
    let rest_mean = scaled_unit(&mut rng, d, REST_CENTER_NORM);
    let sqrt_d = (d as f64).sqrt();
    let prototypes = GesturePrototypes {
        means,
        covariance_scale: ACTIVE_NOISE_NORM / sqrt_d,
        rest_mean: rest_mean.clone(),
        rest_scale: REST_NOISE_NORM / sqrt_d,
    };

    let head = PopulationHead {
        weights: prototypes
            .means
            .iter()
            .map(|m| m.iter().map(|x| x * LOGIT_SCALE).collect())
            .collect(),
        bias: prototypes
            .means
            .iter()
            .map(|m| -0.5 * LOGIT_SCALE * linalg::dot(m, m))
            .collect(),
        temperature: HEAD_TEMPERATURE,
        rest_center: rest_mean,
        activity_gain: ACTIVITY_GAIN,
        activity_radius: ACTIVITY_RADIUS,
    };

    let accuracy = baseline_accuracy(
        &head,
        &prototypes,
        &UserPerturbation::identity(d),
        SELF_CHECK_FRAMES,
        seed ^ 0x5e1f_c4ec,
    )?;
    if accuracy < SELF_CHECK_ACCURACY {
        return Err(Error::SelfCheck {
            accuracy,
            required: SELF_CHECK_ACCURACY,
        });
    }
    Ok((head, prototypes))
}

/// User-specific distribution shift applied to population-space samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserPerturbation {
    /// Row-major `d × d` orthogonal matrix.
    pub rotation: Vec<f64>,
    pub gain: f64,
    pub bias_shift: Vec<f64>,
    /// Multiplier on the prototype noise scale.
    pub noise_scale: f64,
    pub severity: f64,
}

impl UserPerturbation {
    pub fn identity(d: usize) -> Self {
        Self {
            rotation: linalg::identity(d),
            gain: 1.0,
            bias_shift: vec![0.0; d],
            noise_scale: 1.0,
            severity: 0.0,
        }
    }

    /// Draws the user's shift structure from `seed` and scales it by
    /// `severity`. For a fixed seed the structure is shared across
    /// severities, so the perturbation grows continuously with the knob.
    ///
    /// The rotation acts on disjoint planes of an orthonormal basis whose
    /// leading vectors span the class prototypes. Classes are paired at
    /// random and each pair's plane is rotated, so past a quarter turn one
    /// gesture of the pair lands nearer the other's prototype. The remaining
    /// basis vectors are paired and rotated the same way.
    pub fn sample(prototypes: &GesturePrototypes, seed: u64, severity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::InvalidValue(format!(
                "severity must be in [0, 1], got {severity}"
            )));
        }
        let d = prototypes.dim();
        let n = prototypes.n_classes();
        if d == 0 || n > d {
            return Err(Error::InvalidDimension(format!(
                "need 1 <= classes <= d, got {n} classes in d = {d}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut candidates = prototypes.means.iter().cloned();
        while basis.len() < d {
            let mut v = candidates
                .next()
                .unwrap_or_else(|| gaussian_vec(&mut rng, d));
            for _ in 0..2 {
                for u in &basis {
                    let proj = linalg::dot(&v, u);
                    v.iter_mut().zip(u).for_each(|(x, ui)| *x -= proj * ui);
                }
            }
            let norm = linalg::norm(&v);
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }

        let mut classes: Vec<usize> = (0..n).collect();
        classes.shuffle(&mut rng);
        let mut others: Vec<usize> = (n..d).collect();
        others.shuffle(&mut rng);
        let mut rotation = linalg::identity(d);
        for pair in classes.chunks_exact(2).chain(others.chunks_exact(2)) {
            let factor: f64 = rng.random_range(0.5..1.0);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (sin, cos) = (sign * severity * MAX_ROTATION * factor).sin_cos();
            let (u, v) = (&basis[pair[0]], &basis[pair[1]]);
            // Q += (cos - 1)(uuᵀ + vvᵀ) + sin (vuᵀ - uvᵀ)
            for r in 0..d {
                for c in 0..d {
                    rotation[r * d + c] += (cos - 1.0) * (u[r] * u[c] + v[r] * v[c])
                        + sin * (v[r] * u[c] - u[r] * v[c]);
                }
            }
        }
        let shift_dir = scaled_unit(&mut rng, d, 1.0);
        Ok(Self {
            rotation,
            gain: 1.0 + 0.15 * severity,
            bias_shift: shift_dir.iter().map(|x| x * 0.15 * severity).collect(),
            noise_scale: 1.0 + 0.5 * severity,
            severity,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias_shift.len()
    }

    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        let mut qt = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                qt[j * d + i] = self.rotation[i * d + j];
            }
        }
        linalg::identity_residual(&qt, &self.rotation, d)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = linalg::mat_vec(&self.rotation, x);
        for (o, s) in out.iter_mut().zip(&self.bias_shift) {
            *o = self.gain * *o + s;
        }
        out
    }
}

fn check_compat(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
) -> Result<()> {
    let d = prototypes.dim();
    if head.rest_center.len() != d || user.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "user perturbation",
            expected: d,
            got: user.dim(),
        });
    }
    Ok(())
}

fn make_frame(
    head: &PopulationHead,
    user: &UserPerturbation,
    x: Vec<f64>,
    label: Option<usize>,
    phase: Phase,
) -> Frame {
    let embedding = Embedding::new(user.apply(&x)).expect("finite sample");
    let prob = head.probs(&embedding).expect("dimension checked");
    Frame {
        embedding,
        prob,
        label,
        phase,
    }
}

pub fn active_frame(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
    gesture: usize,
    rng: &mut impl Rng,
) -> Result<Frame> {
    check_compat(head, prototypes, user)?;
    let mean = prototypes.means.get(gesture).ok_or(Error::IndexOutOfRange {
        what: "gesture",
        index: gesture,
        len: prototypes.n_classes(),
    })?;
    let sd = prototypes.covariance_scale * user.noise_scale;
    let x = mean
        .iter()
        .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(make_frame(head, user, x, Some(gesture), Phase::Active))
}

pub fn rest_frame(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
    rng: &mut impl Rng,
) -> Result<Frame> {
    check_compat(head, prototypes, user)?;
    let sd = prototypes.rest_scale;
    let x = prototypes
        .rest_mean
        .iter()
        .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(make_frame(head, user, x, None, Phase::Rest))
}

/// Frame counts making up one gesture execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstShape {
    pub lead_rest_min: usize,
    pub lead_rest_max: usize,
    pub active_frames: usize,
    pub tail_frames: usize,
}

impl BurstShape {
    pub fn new(active_frames: usize) -> Self {
        Self {
            lead_rest_min: 5,
            lead_rest_max: 15,
            active_frames,
            tail_frames: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_frames == 0 {
            return Err(Error::InvalidConfig("gesture must span >= 1 frame".into()));
        }
        if self.lead_rest_min > self.lead_rest_max {
            return Err(Error::InvalidConfig(
                "lead_rest_min exceeds lead_rest_max".into(),
            ));
        }
        Ok(())
    }
}

/// Rest frames, then `active_frames` samples of `gesture`, then rest frames.
pub fn gesture_burst(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
    gesture: usize,
    shape: &BurstShape,
    rng: &mut impl Rng,
) -> Result<Vec<Frame>> {
    shape.validate()?;
    if gesture >= prototypes.n_classes() {
        return Err(Error::IndexOutOfRange {
            what: "gesture",
            index: gesture,
            len: prototypes.n_classes(),
        });
    }
    let lead = rng.random_range(shape.lead_rest_min..=shape.lead_rest_max);
    let mut frames = Vec::with_capacity(lead + shape.active_frames + shape.tail_frames);
    for _ in 0..lead {
        frames.push(rest_frame(head, prototypes, user, rng)?);
    }
    for _ in 0..shape.active_frames {
        frames.push(active_frame(head, prototypes, user, gesture, rng)?);
    }
    for _ in 0..shape.tail_frames {
        frames.push(rest_frame(head, prototypes, user, rng)?);
    }
    Ok(frames)
}

/// Fraction of active frames on which the head's argmax equals the intended
/// gesture. Classes are visited round-robin; `seed` fixes the noise draws so
/// different users or severities can be compared on common random numbers.
pub fn baseline_accuracy(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
    frames: usize,
    seed: u64,
) -> Result<f64> {
    if frames == 0 {
        return Err(Error::InvalidValue("need at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prototypes.n_classes();
    let mut correct = 0usize;
    for i in 0..frames {
        let g = i % n;
        let frame = active_frame(head, prototypes, user, g, &mut rng)?;
        if argmax(frame.prob.as_slice()) == g {
            correct += 1;
        }
    }
    Ok(correct as f64 / frames as f64)
}

/// Fraction of rest frames whose summed probability stays below `tau_b`.
pub fn rest_quiet_rate(
    head: &PopulationHead,
    prototypes: &GesturePrototypes,
    user: &UserPerturbation,
    frames: usize,
    tau_b: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quiet = 0usize;
    for _ in 0..frames {
        if rest_frame(head, prototypes, user, &mut rng)?.prob.sum() < tau_b {
            quiet += 1;
        }
    }
    Ok(quiet as f64 / frames.max(1) as f64)
}
