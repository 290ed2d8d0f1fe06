//! Per-round performance metrics computed from attempt records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Gesture;
use crate::pipeline::{EventRecord, LogKind};

/// One attempted gesture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub user: u64,
    pub round: String,
    pub attempt: usize,
    pub intended: Gesture,
    /// First emission observed during the attempt.
    pub emitted: Option<Gesture>,
    pub spacebar: bool,
    /// Frames from gesture onset to the first emission.
    pub frames_to_response: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    First,
    Last,
}

fn window(
    records: &[TrialRecord],
    gesture: Gesture,
    which: Window,
    k: usize,
) -> Vec<&TrialRecord> {
    let of_gesture: Vec<&TrialRecord> =
        records.iter().filter(|r| r.intended == gesture).collect();
    match which {
        Window::First => of_gesture.into_iter().take(k).collect(),
        Window::Last => {
            let skip = of_gesture.len().saturating_sub(k);
            of_gesture.into_iter().skip(skip).collect()
        }
    }
}

/// Precision of the emissions made during the user's first (or last) `k`
/// attempts of `gesture`: correct emissions over all emissions. `None` when
/// the window holds no emission.
pub fn precision_window(
    records: &[TrialRecord],
    gesture: Gesture,
    which: Window,
    k: usize,
) -> Option<f64> {
    let win = window(records, gesture, which, k);
    let emitted = win.iter().filter(|r| r.emitted.is_some()).count();
    if emitted == 0 {
        return None;
    }
    let correct = win.iter().filter(|r| r.emitted == Some(gesture)).count();
    Some(correct as f64 / emitted as f64)
}

/// Spacebar presses over attempted actions.
pub fn fnr(records: &[TrialRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRound);
    }
    let reports = records.iter().filter(|r| r.spacebar).count();
    Ok(reports as f64 / records.len() as f64)
}

/// Precision over consecutive blocks of `block` attempts; a trailing
/// partial block is dropped.
pub fn precision_series(records: &[TrialRecord], block: usize) -> Vec<Option<f64>> {
    records
        .chunks_exact(block.max(1))
        .map(|chunk| {
            let emitted = chunk.iter().filter(|r| r.emitted.is_some()).count();
            let correct = chunk
                .iter()
                .filter(|r| r.emitted.is_some() && r.emitted == Some(r.intended))
                .count();
            (emitted > 0).then(|| correct as f64 / emitted as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GesturePrecision {
    pub gesture: Gesture,
    pub attempts: usize,
    pub first_k: Option<f64>,
    pub last_k: Option<f64>,
    pub delta: Option<f64>,
    /// Fewer than `2k` attempts, so the windows share records.
    pub overlapping: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub user: u64,
    pub round: String,
    pub per_gesture: Vec<GesturePrecision>,
    /// Mean of the defined per-gesture deltas.
    pub mean_delta: Option<f64>,
    pub fnr: f64,
    pub series: Vec<Option<f64>>,
    pub completed: bool,
    pub attempts: usize,
}

pub fn summarize(
    user: u64,
    round: &str,
    records: &[TrialRecord],
    completed: bool,
    k: usize,
    block: usize,
) -> Result<MetricsReport> {
    let fnr = fnr(records)?;
    let per_gesture: Vec<GesturePrecision> = Gesture::ALL
        .iter()
        .map(|&g| {
            let attempts = records.iter().filter(|r| r.intended == g).count();
            let first_k = precision_window(records, g, Window::First, k);
            let last_k = precision_window(records, g, Window::Last, k);
            GesturePrecision {
                gesture: g,
                attempts,
                first_k,
                last_k,
                delta: first_k.zip(last_k).map(|(f, l)| l - f),
                overlapping: attempts < 2 * k,
            }
        })
        .collect();
    let deltas: Vec<f64> = per_gesture.iter().filter_map(|g| g.delta).collect();
    let mean_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
    Ok(MetricsReport {
        user,
        round: round.to_string(),
        per_gesture,
        mean_delta,
        fnr,
        series: precision_series(records, block),
        completed,
        attempts: records.len(),
    })
}

/// Rebuilds attempt records from an event log alone. Each `attempt` line
/// opens a record that collects the following emissions and reports.
pub fn trials_from_log(user: u64, round: &str, log: &[EventRecord]) -> Vec<TrialRecord> {
    let mut out: Vec<TrialRecord> = Vec::new();
    let mut onset_t = 0u64;
    for rec in log {
        match rec.kind {
            LogKind::Attempt => {
                onset_t = rec.t;
                out.push(TrialRecord {
                    user,
                    round: round.to_string(),
                    attempt: out.len(),
                    intended: rec.pending.expect("attempt lines carry the gesture"),
                    emitted: None,
                    spacebar: false,
                    frames_to_response: None,
                });
            }
            LogKind::Advanced | LogKind::Ignored => {
                if let Some(cur) = out.last_mut() {
                    if cur.emitted.is_none() {
                        cur.emitted = rec.emitted;
                        cur.frames_to_response = Some((rec.t - onset_t) as u32);
                    }
                }
            }
            LogKind::UserReport => {
                if let Some(cur) = out.last_mut() {
                    cur.spacebar = true;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

pub fn mean_stats(values: &[f64]) -> Option<MeanStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStats {
        n,
        mean,
        sd,
        se: sd / (n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, intended: Gesture, emitted: Option<Gesture>, spacebar: bool) -> TrialRecord {
        TrialRecord {
            user: 0,
            round: "r".into(),
            attempt: i,
            intended,
            emitted,
            spacebar,
            frames_to_response: None,
        }
    }

    #[test]
    fn all_correct_is_one() {
        let records: Vec<_> = (0..25)
            .map(|i| rec(i, Gesture::Up, Some(Gesture::Up), false))
            .collect();
        assert_eq!(precision_window(&records, Gesture::Up, Window::First, 25), Some(1.0));
    }

    #[test]
    fn hand_counted_precision() {
        // 20 correct, 5 emissions of other classes
        let mut records: Vec<_> = (0..20)
            .map(|i| rec(i, Gesture::Left, Some(Gesture::Left), false))
            .collect();
        for i in 20..25 {
            records.push(rec(i, Gesture::Left, Some(Gesture::Down), true));
        }
        assert_eq!(precision_window(&records, Gesture::Left, Window::First, 25), Some(0.8));
        assert_eq!(precision_window(&records, Gesture::Left, Window::Last, 5), Some(0.0));
        // other gestures interleaved do not count
        records.insert(3, rec(99, Gesture::Up, Some(Gesture::Left), false));
        assert_eq!(precision_window(&records, Gesture::Left, Window::First, 25), Some(0.8));
    }

    #[test]
    fn silent_window_is_absent() {
        let records: Vec<_> = (0..5).map(|i| rec(i, Gesture::Up, None, true)).collect();
        assert_eq!(precision_window(&records, Gesture::Up, Window::First, 25), None);
        assert_eq!(precision_window(&records, Gesture::Down, Window::Last, 25), None);
    }

    #[test]
    fn fnr_definition() {
        let records: Vec<_> = (0..100)
            .map(|i| rec(i, Gesture::Up, None, i < 13))
            .collect();
        assert_eq!(fnr(&records).unwrap(), 0.13);
        assert_eq!(fnr(&records[13..]).unwrap(), 0.0);
        assert!(matches!(fnr(&[]), Err(Error::EmptyRound)));
    }

    #[test]
    fn series_length_and_overlap_flag() {
        let records: Vec<_> = (0..23)
            .map(|i| rec(i, Gesture::ALL[i % 6], Some(Gesture::ALL[i % 6]), false))
            .collect();
        assert_eq!(precision_series(&records, 5).len(), 4);
        let report = summarize(0, "r", &records, true, 25, 5).unwrap();
        assert!(report.per_gesture.iter().all(|g| g.overlapping));
        assert_eq!(report.mean_delta, Some(0.0));
    }

    #[test]
    fn stats() {
        let s = mean_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, 1.0);
        assert!(mean_stats(&[]).is_none());
    }
}
