//! Shared domain types.
//!
//! Types are plain data with public fields; [`Validate`] reports every broken
//! invariant instead of stopping at the first, so loaders can show the whole
//! picture. Timestamps are `f64` seconds and intervals are half-open.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Half-open time interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration(&self) -> f64 {
        (self.end_s - self.start_s).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        (self.start_s + self.end_s) / 2.0
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.start_s >= self.start_s && other.end_s <= self.end_s
    }

    /// Clamp both ends into `bounds`, keeping `start <= end`.
    pub fn clip_to(&self, bounds: &Interval) -> Interval {
        let start_s = self.start_s.clamp(bounds.start_s, bounds.end_s);
        let end_s = self.end_s.clamp(bounds.start_s, bounds.end_s).max(start_s);
        Interval { start_s, end_s }
    }
}

/// Outcome of [`Validate::validate`]: empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, violation: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(violation());
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        f.write_str(&self.violations.join("; "))
    }
}

pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

/// Pooled per-frame embeddings of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEmbeddingSeq {
    pub video_id: String,
    pub fps_sampled: f64,
    pub dim: usize,
    pub frames: Vec<Vec<f64>>,
    pub duration_s: f64,
}

impl FrameEmbeddingSeq {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.fps_sampled
    }

    /// `floor(t * fps)` clamped into `[0, M)`; the flag reports whether
    /// clamping was needed.
    pub fn frame_at(&self, t: f64) -> (usize, bool) {
        let raw = (t * self.fps_sampled).floor();
        let last = self.len().saturating_sub(1);
        if raw.is_nan() || raw < 0.0 {
            (0, true)
        } else if raw > last as f64 {
            (last, true)
        } else {
            (raw as usize, false)
        }
    }

    /// End of the covered timeline: the later of `M / fps` and the stated
    /// duration.
    pub fn timeline_end(&self) -> f64 {
        (self.len() as f64 / self.fps_sampled).max(self.duration_s)
    }

    /// Seconds interval of a frame range; the final event extends to
    /// [`timeline_end`](Self::timeline_end).
    pub fn range_interval(&self, range: &Range<usize>) -> Interval {
        let end_s = if range.end >= self.len() {
            self.timeline_end()
        } else {
            self.frame_time(range.end)
        };
        Interval::new(self.frame_time(range.start), end_s)
    }
}

impl Validate for FrameEmbeddingSeq {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(!self.video_id.is_empty(), || "video_id is empty".into());
        r.check(self.fps_sampled.is_finite() && self.fps_sampled > 0.0, || {
            format!("fps_sampled {} is not positive", self.fps_sampled)
        });
        r.check(self.dim > 0, || "dim is zero".into());
        r.check(!self.frames.is_empty(), || "no frames".into());
        r.check(self.duration_s.is_finite() && self.duration_s >= 0.0, || {
            format!("duration_s {} is negative or not finite", self.duration_s)
        });
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.dim {
                r.violations
                    .push(format!("frame {i} has length {} but dim is {}", frame.len(), self.dim));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                r.violations.push(format!("frame {i} has a non-finite component"));
            }
        }
        if self.fps_sampled > 0.0 && self.duration_s.is_finite() {
            let covered = self.len() as f64 / self.fps_sampled;
            r.check(covered <= self.duration_s + 1.0 / self.fps_sampled + 1e-9, || {
                format!(
                    "{} frames at {} fps exceed duration {}s",
                    self.len(),
                    self.fps_sampled,
                    self.duration_s
                )
            });
        }
        r
    }
}

/// Contiguous events over `[0, num_frames)`. Boundary `b` starts a new event,
/// so frame `b` belongs to the event on its right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPartition {
    pub num_frames: usize,
    pub boundaries: Vec<usize>,
}

impl EventPartition {
    pub fn new(num_frames: usize, boundaries: Vec<usize>) -> Self {
        Self { num_frames, boundaries }
    }

    pub fn single(num_frames: usize) -> Self {
        Self::new(num_frames, Vec::new())
    }

    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut boundaries = Vec::new();
        let mut acc = 0;
        for (i, len) in lengths.iter().enumerate() {
            acc += len;
            if i + 1 < lengths.len() {
                boundaries.push(acc);
            }
        }
        Self::new(acc, boundaries)
    }

    pub fn num_events(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn events(&self) -> Vec<Range<usize>> {
        let mut starts = vec![0];
        starts.extend(&self.boundaries);
        let mut ends = self.boundaries.clone();
        ends.push(self.num_frames);
        starts.into_iter().zip(ends).map(|(s, e)| s..e).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.events().iter().map(|r| r.len()).collect()
    }

    /// Index of the event containing `frame` (frames past the end map to the
    /// last event).
    pub fn event_of(&self, frame: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= frame)
    }
}

impl Validate for EventPartition {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(self.num_frames >= 1, || "partition covers no frames".into());
        r.check(self.boundaries.windows(2).all(|w| w[0] < w[1]), || {
            "boundaries not strictly increasing".into()
        });
        for &b in &self.boundaries {
            r.check(b > 0 && b < self.num_frames, || {
                format!("boundary {b} outside (0, {})", self.num_frames)
            });
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingClip {
    pub start_s: f64,
    pub end_s: f64,
    pub foreground: f64,
    pub salience: f64,
}

impl GroundingClip {
    pub fn interval(&self) -> Interval {
        Interval::new(self.start_s, self.end_s)
    }
}

/// Per-clip grounding scores for one (video, query) pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingTrack {
    pub clips: Vec<GroundingClip>,
}

impl Validate for GroundingTrack {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        for (i, c) in self.clips.iter().enumerate() {
            let finite = [c.start_s, c.end_s, c.foreground, c.salience]
                .iter()
                .all(|v| v.is_finite());
            r.check(finite, || format!("clip {i} has a non-finite field"));
            r.check((0.0..=1.0).contains(&c.salience), || {
                format!("clip {i}: salience out of [0,1] ({})", c.salience)
            });
            r.check(c.start_s < c.end_s, || format!("clip {i}: start not before end"));
        }
        r.check(
            self.clips.windows(2).all(|w| w[0].start_s <= w[1].start_s),
            || "clips not ordered by start".into(),
        );
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    #[serde(flatten)]
    pub interval: Interval,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    #[serde(flatten)]
    pub interval: Interval,
    pub objects: Vec<String>,
}

/// Everything known about one event, as handed to the reasoner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipInfoState {
    pub event_index: usize,
    pub interval: Interval,
    pub action_captions: Vec<Caption>,
    pub object_detections: Vec<ObjectRecord>,
    pub temporal_prompt: String,
    pub action_summary: String,
    pub object_summary: String,
    pub informative_score: Option<u8>,
}

impl Validate for ClipInfoState {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let within = |i: &Interval| self.interval.contains_interval(i);
        r.check(self.action_captions.iter().all(|c| within(&c.interval)), || {
            "action caption outside event interval".into()
        });
        r.check(self.object_detections.iter().all(|o| within(&o.interval)), || {
            "object record outside event interval".into()
        });
        if let Some(s) = self.informative_score {
            r.check((1..=3).contains(&s), || format!("informative score {s} not in 1..=3"));
        }
        r
    }
}

/// Ground truth: an option index for multiple choice, text for open QA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Index(usize),
    Text(String),
}

impl GroundTruth {
    /// Option index, accepting a bare letter `A`..`E` as well.
    pub fn option_index(&self) -> Option<usize> {
        match self {
            GroundTruth::Index(i) => Some(*i),
            GroundTruth::Text(t) => {
                let t = t.trim();
                let mut chars = t.chars();
                let c = chars.next()?.to_ascii_uppercase();
                (chars.next().is_none() && ('A'..='E').contains(&c)).then(|| (c as u8 - b'A') as usize)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub video_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

impl Task {
    pub fn is_open(&self) -> bool {
        self.options.is_none()
    }
}

impl Validate for Task {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(!self.task_id.is_empty(), || "task_id is empty".into());
        r.check(!self.video_id.is_empty(), || "video_id is empty".into());
        if let Some(options) = &self.options {
            r.check(options.len() == 5, || {
                format!("expected 5 options, found {}", options.len())
            });
            r.check(options.iter().all(|o| !o.trim().is_empty()), || {
                "options must be non-empty".into()
            });
            if let Some(GroundTruth::Index(i)) = &self.ground_truth {
                r.check(*i < 5, || format!("ground truth index {i} out of range"));
            }
        }
        r
    }
}

/// A predicted answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Option(usize),
    Text(String),
}

impl Answer {
    pub fn letter(&self) -> Option<char> {
        match self {
            Answer::Option(i) if *i < 26 => Some((b'A' + *i as u8) as char),
            _ => None,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Option(i) => match self.letter() {
                Some(l) => write!(f, "{l}"),
                None => write!(f, "{i}"),
            },
            Answer::Text(t) => f.write_str(t),
        }
    }
}

/// Degradations and fallbacks recorded instead of failing a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    SegmentationFallback,
    SegmentWithoutCenter,
    GroundingMissing,
    GroundingZeroDuration,
    CaptionsMissing,
    ObjectsMissing,
    CaptionClamped,
    ObjectClamped,
    SummaryUnavailable,
    InformativeParseFallback,
    AnswerParseFallback,
    ConfidenceParseFallback,
    JudgeParseFallback,
    StageFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Confident,
    Exhausted,
}

/// One merge-and-answer round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRound {
    /// Event indices in temporal order.
    pub merged_events: Vec<usize>,
    pub qa_prompt: String,
    pub qa_completion: String,
    pub parsed_answer: Answer,
    pub reflection_prompt: String,
    pub reflection_completion: String,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub informative_scores: Vec<u8>,
    /// Event indices in the order they were considered.
    pub merge_order: Vec<usize>,
    pub rounds: Vec<ReasoningRound>,
    pub final_answer: Answer,
    pub termination: Termination,
    pub flags: Vec<Flag>,
}

impl Validate for ReasoningTrace {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        r.check(!self.rounds.is_empty(), || "trace has no rounds".into());
        for pair in self.rounds.windows(2) {
            let (prev, next) = (&pair[0].merged_events, &pair[1].merged_events);
            let superset = prev.iter().all(|e| next.contains(e));
            r.check(superset && next.len() > prev.len(), || {
                format!("merged set {next:?} does not strictly extend {prev:?}")
            });
        }
        for (i, round) in self.rounds.iter().enumerate() {
            r.check((1..=3).contains(&round.confidence), || {
                format!("round {i}: confidence {} not in 1..=3", round.confidence)
            });
        }
        r.check(self.informative_scores.iter().all(|s| (1..=3).contains(s)), || {
            "informative score not in 1..=3".into()
        });
        if let Some(last) = self.rounds.last() {
            let all = last.merged_events.len() == self.informative_scores.len();
            r.check(last.confidence == 3 || all, || {
                "final round neither confident nor exhaustive".into()
            });
        }
        r
    }
}
