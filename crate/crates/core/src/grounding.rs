//! Query-aware relevance: retrieve the top moments of a grounding track and
//! distribute them over the query-agnostic events.
//!
//! Each event receives the share of the merged moment timeline that falls
//! inside it, so the shares add up to one whenever any moment has positive
//! length.

use serde::{Deserialize, Serialize};

use crate::model::{EventPartition, FrameEmbeddingSeq, GroundingTrack, Interval};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundingError {
    #[error("grounding track has no clips")]
    EmptyTrack,
    #[error("top-k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub interval: Interval,
    pub foreground: f64,
    pub salience: f64,
}

/// Retrieved moments, highest foreground score first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub moments: Vec<Moment>,
}

/// Top-`k` clips by foreground score; equal scores keep the earlier start.
pub fn rank_moments(track: &GroundingTrack, k: usize) -> Result<MomentSet, GroundingError> {
    if k == 0 {
        return Err(GroundingError::ZeroK);
    }
    if track.clips.is_empty() {
        return Err(GroundingError::EmptyTrack);
    }
    let mut clips = track.clips.clone();
    clips.sort_by(|a, b| {
        b.foreground
            .total_cmp(&a.foreground)
            .then(a.start_s.total_cmp(&b.start_s))
    });
    clips.truncate(k);
    Ok(MomentSet {
        moments: clips
            .into_iter()
            .map(|c| Moment {
                interval: c.interval(),
                foreground: c.foreground,
                salience: c.salience,
            })
            .collect(),
    })
}

/// Sorted, disjoint union of intervals clipped to `bounds`; empty pieces are
/// dropped.
pub fn merge_intervals(intervals: &[Interval], bounds: &Interval) -> Vec<Interval> {
    let mut pieces: Vec<Interval> = intervals
        .iter()
        .map(|i| i.clip_to(bounds))
        .filter(|i| i.duration() > 0.0)
        .collect();
    pieces.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut merged: Vec<Interval> = Vec::with_capacity(pieces.len());
    for p in pieces {
        match merged.last_mut() {
            Some(last) if p.start_s <= last.end_s => last.end_s = last.end_s.max(p.end_s),
            _ => merged.push(p),
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub fractions: Vec<f64>,
    /// True when the moments cover no time at all inside the video.
    pub zero_union: bool,
}

/// Share of the moment union inside each event.
pub fn inherit_relevance(events: &[Interval], moments: &MomentSet) -> RelevanceReport {
    let Some(bounds) = events
        .first()
        .zip(events.last())
        .map(|(a, b)| Interval::new(a.start_s, b.end_s))
    else {
        return RelevanceReport {
            fractions: Vec::new(),
            zero_union: true,
        };
    };
    let spans: Vec<Interval> = moments.moments.iter().map(|m| m.interval).collect();
    let union = merge_intervals(&spans, &bounds);
    let total: f64 = union.iter().map(Interval::duration).sum();
    if total <= 0.0 {
        return RelevanceReport {
            fractions: vec![0.0; events.len()],
            zero_union: true,
        };
    }
    let fractions = events
        .iter()
        .map(|e| {
            let inside: f64 = union.iter().map(|u| u.overlap(e)).sum();
            (inside / total).clamp(0.0, 1.0)
        })
        .collect();
    RelevanceReport {
        fractions,
        zero_union: false,
    }
}

/// Seconds intervals of the events of `partition`.
pub fn event_intervals(partition: &EventPartition, seq: &FrameEmbeddingSeq) -> Vec<Interval> {
    partition.events().iter().map(|r| seq.range_interval(r)).collect()
}

pub fn relevance_bucket(fraction: f64) -> &'static str {
    if fraction <= 0.0 {
        "none"
    } else if fraction <= 0.25 {
        "low"
    } else if fraction <= 0.6 {
        "medium"
    } else {
        "high"
    }
}

/// Temporal prompt for one event. `event_index` is zero-based; the text
/// numbers clips from 1.
pub fn relevance_to_text(fraction: f64, event_index: usize, interval: &Interval) -> String {
    format!(
        "Clip {} spans {:.1}s–{:.1}s. Query-relevance: {} ({:.1}% of the retrieved key moments fall in this clip).",
        event_index + 1,
        interval.start_s,
        interval.end_s,
        relevance_bucket(fraction),
        fraction * 100.0
    )
}

/// Temporal prompt used when no grounding is available.
pub fn neutral_text(event_index: usize, interval: &Interval) -> String {
    format!(
        "Clip {} spans {:.1}s–{:.1}s. Query-relevance: unknown (no temporal grounding available).",
        event_index + 1,
        interval.start_s,
        interval.end_s
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroundingClip;
    use proptest::prelude::*;

    fn clip(start_s: f64, end_s: f64, foreground: f64) -> GroundingClip {
        GroundingClip {
            start_s,
            end_s,
            foreground,
            salience: 0.5,
        }
    }

    fn moments(spans: &[(f64, f64)]) -> MomentSet {
        MomentSet {
            moments: spans
                .iter()
                .map(|&(s, e)| Moment {
                    interval: Interval::new(s, e),
                    foreground: 1.0,
                    salience: 0.0,
                })
                .collect(),
        }
    }

    fn thirds() -> Vec<Interval> {
        vec![
            Interval::new(0.0, 60.0),
            Interval::new(60.0, 120.0),
            Interval::new(120.0, 180.0),
        ]
    }

    #[test]
    fn ranking() {
        let track = GroundingTrack {
            clips: vec![clip(0.0, 2.0, 0.2), clip(2.0, 4.0, 0.9), clip(4.0, 6.0, 0.5)],
        };
        let top = rank_moments(&track, 2).unwrap();
        let starts: Vec<f64> = top.moments.iter().map(|m| m.interval.start_s).collect();
        assert_eq!(starts, vec![2.0, 4.0]);
        assert_eq!(rank_moments(&track, 10).unwrap().moments.len(), 3);

        let tied = GroundingTrack {
            clips: vec![clip(0.0, 2.0, 0.5), clip(2.0, 4.0, 0.5)],
        };
        assert_eq!(rank_moments(&tied, 1).unwrap().moments[0].interval.start_s, 0.0);
        assert_eq!(
            rank_moments(&GroundingTrack::default(), 1),
            Err(GroundingError::EmptyTrack)
        );
    }

    #[test]
    fn straddling_moment_splits_evenly() {
        let r = inherit_relevance(&thirds(), &moments(&[(50.0, 70.0)]));
        assert_eq!(r.fractions, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn contained_moment() {
        let r = inherit_relevance(&thirds(), &moments(&[(130.0, 140.0)]));
        assert_eq!(r.fractions, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn two_moments_at_both_ends() {
        let r = inherit_relevance(&thirds(), &moments(&[(0.0, 10.0), (170.0, 180.0)]));
        assert_eq!(r.fractions, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn zero_length_moments_flagged() {
        let r = inherit_relevance(&thirds(), &moments(&[(30.0, 30.0)]));
        assert!(r.zero_union);
        assert_eq!(r.fractions, vec![0.0; 3]);
    }

    #[test]
    fn temporal_prompt_buckets() {
        let iv = Interval::new(0.0, 45.0);
        assert_eq!(
            relevance_to_text(0.5, 0, &iv),
            "Clip 1 spans 0.0s–45.0s. Query-relevance: medium (50.0% of the retrieved key moments fall in this clip)."
        );
        assert!(relevance_to_text(0.0, 1, &iv).contains("Query-relevance: none (0.0% "));
        assert!(relevance_to_text(1.0, 2, &iv).contains("Query-relevance: high (100.0% "));
        assert_eq!(relevance_bucket(0.25), "low");
        assert_eq!(relevance_bucket(0.6), "medium");
        assert_eq!(relevance_bucket(0.61), "high");
    }

    proptest! {
        #[test]
        fn splitting_a_moment_changes_nothing(s in 0.0f64..150.0, len in 0.5f64..30.0, cut in 0.01f64..0.99) {
            let e = s + len;
            let m = s + cut * len;
            let whole = inherit_relevance(&thirds(), &moments(&[(s, e)]));
            let split = inherit_relevance(&thirds(), &moments(&[(s, m), (m, e)]));
            for (a, b) in whole.fractions.iter().zip(&split.fractions) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
