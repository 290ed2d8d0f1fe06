//! Newline-delimited JSON frame logs.
//!
//! The first line is a header `{version, d, N, frame_rate}`; every following
//! line is one frame `{e, prob, label, phase}` with `label = -1` when no
//! gesture was intended and `phase` 0 (rest) or 1 (active). Logs written by
//! this crate also carry the frame count in the header so truncation is
//! detected, and may carry a `session` block plus per-frame `report` counts
//! that allow a full pipeline replay.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{Embedding, ProbVector, SnapshotDocument};
use crate::context::{Frame, Phase};
use crate::error::{Error, Result};
use crate::game::Gesture;
use crate::pipeline::RecordedFrame;
use crate::postprocess::PostProcessConfig;

pub const REPLAY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub frame_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionHeader>,
}

/// Everything besides the frames needed to re-run a pipeline session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub path: Vec<Gesture>,
    pub learning: bool,
    pub postprocess: PostProcessConfig,
    #[serde(default)]
    pub penalize_wrong_emission: bool,
    /// Bandit state at the start of the session.
    pub model: SnapshotDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReplayRecord {
    e: Vec<f64>,
    prob: Vec<f64>,
    label: i64,
    phase: u8,
    #[serde(default, skip_serializing_if = "is_zero")]
    report: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl From<&RecordedFrame> for ReplayRecord {
    fn from(r: &RecordedFrame) -> Self {
        Self {
            e: r.frame.embedding.as_slice().to_vec(),
            prob: r.frame.prob.as_slice().to_vec(),
            label: r.frame.label.map_or(-1, |l| l as i64),
            phase: match r.frame.phase {
                Phase::Rest => 0,
                Phase::Active => 1,
            },
            report: r.reports_before,
        }
    }
}

pub fn write_replay(path: &Path, header: &ReplayHeader, frames: &[RecordedFrame]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = header.clone();
    header.version = REPLAY_VERSION;
    header.frames = Some(frames.len() as u64);
    let mut write_line = |value: String| -> Result<()> {
        out.write_all(value.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for f in frames {
        write_line(serde_json::to_string(&ReplayRecord::from(f)).expect("record serializes"))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Streaming reader over a frame log.
pub struct ReplayReader {
    path: PathBuf,
    header: ReplayHeader,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    yielded: u64,
    done: bool,
}

/// Opens a log, checking the header against the expected dimensions when
/// given.
pub fn replay_open(
    path: &Path,
    expected_d: Option<usize>,
    expected_n: Option<usize>,
) -> Result<ReplayReader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let first = lines
        .next()
        .ok_or_else(|| schema("missing header line".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: ReplayHeader =
        serde_json::from_str(&first).map_err(|e| schema(format!("bad header: {e}")))?;
    if header.version != REPLAY_VERSION {
        return Err(Error::VersionMismatch {
            expected: REPLAY_VERSION,
            found: header.version,
        });
    }
    if let Some(d) = expected_d.filter(|&d| d != header.d) {
        return Err(schema(format!(
            "embedding dimension mismatch: log has d = {}, config expects d = {d}",
            header.d
        )));
    }
    if let Some(n) = expected_n.filter(|&n| n != header.n) {
        return Err(schema(format!(
            "class count mismatch: log has N = {}, config expects N = {n}",
            header.n
        )));
    }
    Ok(ReplayReader {
        path: path.to_path_buf(),
        header,
        lines,
        line_no: 1,
        yielded: 0,
        done: false,
    })
}

impl ReplayReader {
    pub fn header(&self) -> &ReplayHeader {
        &self.header
    }

    fn schema(&self, message: String) -> Error {
        Error::Schema {
            path: self.path.clone(),
            message: format!("line {}: {message}", self.line_no),
        }
    }

    fn parse(&self, line: &str) -> Result<RecordedFrame> {
        let rec: ReplayRecord = serde_json::from_str(line).map_err(|e| {
            if e.is_eof() {
                self.schema(format!("truncated record: {e}"))
            } else {
                self.schema(e.to_string())
            }
        })?;
        if rec.e.len() != self.header.d {
            return Err(self.schema(format!(
                "embedding has {} values, header says d = {}",
                rec.e.len(),
                self.header.d
            )));
        }
        if rec.prob.len() != self.header.n {
            return Err(self.schema(format!(
                "prob has {} values, header says N = {}",
                rec.prob.len(),
                self.header.n
            )));
        }
        let label = match rec.label {
            -1 => None,
            l if l >= 0 && (l as usize) < self.header.n => Some(l as usize),
            l => return Err(self.schema(format!("label {l} out of range"))),
        };
        let phase = match rec.phase {
            0 => Phase::Rest,
            1 => Phase::Active,
            p => return Err(self.schema(format!("phase must be 0 or 1, got {p}"))),
        };
        let embedding = Embedding::new(rec.e).map_err(|e| self.schema(e.to_string()))?;
        let prob = ProbVector::new(rec.prob).map_err(|e| self.schema(e.to_string()))?;
        Ok(RecordedFrame {
            frame: Frame {
                embedding,
                prob,
                label,
                phase,
            },
            reports_before: rec.report,
        })
    }

    /// Next frame, or `None` at the end of the log.
    pub fn replay_next(&mut self) -> Option<Result<RecordedFrame>> {
        if self.done {
            return None;
        }
        loop {
            match self.lines.next() {
                None => {
                    self.done = true;
                    return match self.header.frames {
                        Some(n) if n != self.yielded => Some(Err(self.schema(format!(
                            "log truncated: header declares {n} frames, found {}",
                            self.yielded
                        )))),
                        _ => None,
                    };
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
                Some(Ok(line)) => {
                    self.line_no += 1;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let parsed = self.parse(&line);
                    if parsed.is_err() {
                        self.done = true;
                    } else {
                        self.yielded += 1;
                    }
                    return Some(parsed);
                }
            }
        }
    }

    pub fn read_all(mut self) -> Result<Vec<RecordedFrame>> {
        let mut out = Vec::new();
        while let Some(frame) = self.replay_next() {
            out.push(frame?);
        }
        Ok(out)
    }
}

impl Iterator for ReplayReader {
    type Item = Result<RecordedFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.replay_next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::context::{active_frame, rest_frame, synth_population, UserPerturbation};

    fn header(d: usize) -> ReplayHeader {
        ReplayHeader {
            version: REPLAY_VERSION,
            d,
            n: 6,
            frame_rate: 100.0,
            frames: None,
            session: None,
        }
    }

    fn sample_frames(count: usize) -> Vec<RecordedFrame> {
        let (head, protos) = synth_population(4, 8, 6).unwrap();
        let user = UserPerturbation::sample(&protos, 2, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..count)
            .map(|i| {
                let frame = if i % 3 == 0 {
                    rest_frame(&head, &protos, &user, &mut rng).unwrap()
                } else {
                    active_frame(&head, &protos, &user, i % 6, &mut rng).unwrap()
                };
                RecordedFrame {
                    frame,
                    reports_before: (i % 7 == 0) as u32 + (i % 21 == 0) as u32,
                }
            })
            .collect()
    }

    #[test]
    fn roundtrip_hundred_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let frames = sample_frames(100);
        write_replay(&path, &header(8), &frames).unwrap();
        let reader = replay_open(&path, Some(8), Some(6)).unwrap();
        assert_eq!(reader.header().frames, Some(100));
        assert_eq!(reader.read_all().unwrap(), frames);
    }

    #[test]
    fn dimension_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_replay(&path, &header(8), &sample_frames(3)).unwrap();
        let err = replay_open(&path, Some(16), None).err().unwrap().to_string();
        assert!(err.contains("d = 8") && err.contains("d = 16"), "{err}");
    }

    #[test]
    fn empty_log_ends_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, serde_json::to_string(&header(8)).unwrap() + "\n").unwrap();
        let mut reader = replay_open(&path, Some(8), Some(6)).unwrap();
        assert!(reader.replay_next().is_none());
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_replay(&path, &header(8), &sample_frames(10)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // drop the last two lines entirely
        let kept: Vec<&str> = text.lines().take(9).collect();
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        let err = replay_open(&path, None, None).unwrap().read_all().unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        // cut mid-record
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        let err = replay_open(&path, None, None).unwrap().read_all().unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn missing_file_and_bad_records() {
        assert!(matches!(
            replay_open(Path::new("/nonexistent/log.jsonl"), None, None),
            Err(Error::Io { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut text = serde_json::to_string(&header(2)).unwrap() + "\n";
        text.push_str(r#"{"e":[0.1,0.2],"prob":[0.1,0.1,0.1,0.1,0.1,0.1],"label":9,"phase":1}"#);
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        let err = replay_open(&path, None, None).unwrap().read_all().unwrap_err();
        assert!(err.to_string().contains("label 9"), "{err}");
    }
}
