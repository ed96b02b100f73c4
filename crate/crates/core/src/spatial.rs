//! Spatial information per event: distribute timed captions and object lists
//! into events and summarise them with the language model.

use serde::{Deserialize, Serialize};
use vinsta_llm::{ChatModel, ChatRequest};

use crate::model::{Caption, EventPartition, FrameEmbeddingSeq, Interval, ObjectRecord};
use crate::templates::{ModelFamily, PromptTemplate, TemplateId};

pub const NO_ACTION_INFO: &str = "(no action information available)";
pub const NO_OBJECT_INFO: &str = "(no object information available)";
pub const SUMMARY_UNAVAILABLE: &str = "(summary unavailable)";
pub const DEFAULT_MAX_OBJECTS: usize = 3;

/// Records distributed over events.
#[derive(Debug, Clone, PartialEq)]
pub struct Inherited<T> {
    pub per_event: Vec<Vec<T>>,
    /// Records whose midpoint fell outside the video and were clamped.
    pub clamped: usize,
}

trait Timed: Clone {
    fn interval_mut(&mut self) -> &mut Interval;
    fn interval(&self) -> Interval;
}

impl Timed for Caption {
    fn interval_mut(&mut self) -> &mut Interval {
        &mut self.interval
    }
    fn interval(&self) -> Interval {
        self.interval
    }
}

impl Timed for ObjectRecord {
    fn interval_mut(&mut self) -> &mut Interval {
        &mut self.interval
    }
    fn interval(&self) -> Interval {
        self.interval
    }
}

/// Event owning a record: the event containing the frame at the record's
/// midpoint. The flag reports a midpoint outside the video.
pub fn assign_event(interval: &Interval, partition: &EventPartition, seq: &FrameEmbeddingSeq) -> (usize, bool) {
    let mid = interval.midpoint();
    let (frame, clamped) = seq.frame_at(mid);
    let outside = !(0.0..=seq.timeline_end()).contains(&mid);
    (partition.event_of(frame), clamped || outside)
}

fn inherit<T: Timed>(records: &[T], partition: &EventPartition, seq: &FrameEmbeddingSeq) -> Inherited<T> {
    let events: Vec<Interval> = partition.events().iter().map(|r| seq.range_interval(r)).collect();
    let mut per_event = vec![Vec::new(); events.len()];
    let mut clamped = 0;
    for record in records {
        let (event, was_clamped) = assign_event(&record.interval(), partition, seq);
        clamped += usize::from(was_clamped);
        let mut owned = record.clone();
        let clipped = owned.interval().clip_to(&events[event]);
        *owned.interval_mut() = clipped;
        per_event[event].push(owned);
    }
    Inherited { per_event, clamped }
}

pub fn inherit_captions(captions: &[Caption], partition: &EventPartition, seq: &FrameEmbeddingSeq) -> Inherited<Caption> {
    inherit(captions, partition, seq)
}

/// As [`inherit_captions`]; each record keeps at most `max_objects` names.
pub fn inherit_objects(
    objects: &[ObjectRecord],
    partition: &EventPartition,
    seq: &FrameEmbeddingSeq,
    max_objects: usize,
) -> Inherited<ObjectRecord> {
    let capped: Vec<ObjectRecord> = objects
        .iter()
        .map(|o| ObjectRecord {
            interval: o.interval,
            objects: o.objects.iter().take(max_objects).cloned().collect(),
        })
        .collect();
    inherit(&capped, partition, seq)
}

fn sentence(text: &str) -> &str {
    text.trim().trim_end_matches('.').trim_end()
}

/// One line per record, names joined by `"; "`: `"Sink; Dish rack."`.
pub fn render_objects(records: &[ObjectRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}.", r.objects.join("; ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Captions as running sentences: `"A. B. C."`.
pub fn render_captions(captions: &[Caption]) -> String {
    if captions.is_empty() {
        return String::new();
    }
    format!("{}.", caption_interval_text(captions))
}

/// `{interval_text}` for the action template, which supplies the final period.
pub fn caption_interval_text(captions: &[Caption]) -> String {
    captions.iter().map(|c| sentence(&c.text)).collect::<Vec<_>>().join(". ")
}

/// `{interval_text}` for the object template, which supplies the final period.
pub fn object_interval_text(records: &[ObjectRecord]) -> String {
    records.iter().map(|r| r.objects.join("; ")).collect::<Vec<_>>().join(". ")
}

/// Summary length in words, scaled with event duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordBudget {
    pub words: u32,
    pub reference_duration_s: f64,
    pub min_words: u32,
}

impl Default for WordBudget {
    fn default() -> Self {
        Self {
            words: 180,
            reference_duration_s: 180.0,
            min_words: 60,
        }
    }
}

impl WordBudget {
    pub fn for_duration(&self, duration_s: f64) -> u32 {
        let scaled = (self.words as f64 * duration_s / self.reference_duration_s).round();
        (scaled.max(0.0) as u32).max(self.min_words)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutcome {
    pub text: String,
    /// Rendered prompt; `None` when the call was skipped for lack of input.
    pub prompt: Option<String>,
    pub failed: bool,
}

/// Shared inputs for the two summarisation calls.
pub struct SummaryRequest<'a> {
    pub question: &'a str,
    pub event_duration_s: f64,
    pub words: u32,
    pub family: ModelFamily,
    pub model_name: &'a str,
    pub temperature: f64,
}

impl SummaryRequest<'_> {
    pub fn prompt(&self, id: TemplateId, interval_text: &str) -> String {
        let length = format!("{}", self.event_duration_s.round() as i64);
        let words = self.words.to_string();
        PromptTemplate::get(id, self.family)
            .render(&[
                ("length", &length),
                ("interval_text", interval_text),
                ("words", &words),
                ("question", self.question),
            ])
            .expect("summary templates bind length, interval_text, words, question")
    }

    fn run(&self, id: TemplateId, interval_text: Option<String>, empty: &str, llm: &dyn ChatModel) -> SummaryOutcome {
        let Some(interval_text) = interval_text else {
            return SummaryOutcome {
                text: empty.to_string(),
                prompt: None,
                failed: false,
            };
        };
        let prompt = self.prompt(id, &interval_text);
        let req = ChatRequest::user_prompt(self.model_name, prompt.clone(), self.temperature);
        match llm.complete(&req) {
            Ok(c) => SummaryOutcome {
                text: c.text,
                prompt: Some(prompt),
                failed: false,
            },
            Err(e) => {
                tracing::warn!("summary call failed: {e}");
                SummaryOutcome {
                    text: SUMMARY_UNAVAILABLE.to_string(),
                    prompt: Some(prompt),
                    failed: true,
                }
            }
        }
    }

    pub fn summarize_actions(&self, captions: &[Caption], llm: &dyn ChatModel) -> SummaryOutcome {
        let text = (!captions.is_empty()).then(|| caption_interval_text(captions));
        self.run(TemplateId::ActionSummary, text, NO_ACTION_INFO, llm)
    }

    pub fn summarize_objects(&self, records: &[ObjectRecord], llm: &dyn ChatModel) -> SummaryOutcome {
        let text = (!records.is_empty()).then(|| object_interval_text(records));
        self.run(TemplateId::ObjectSummary, text, NO_OBJECT_INFO, llm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use vinsta_llm::{FnBackend, Gateway, LlmError, RetryPolicy, ScriptedBackend};

    fn seq(m: usize) -> FrameEmbeddingSeq {
        FrameEmbeddingSeq {
            video_id: "v".into(),
            fps_sampled: 1.0,
            dim: 1,
            frames: vec![vec![0.0]; m],
            duration_s: m as f64,
        }
    }

    fn cap(s: f64, e: f64, text: &str) -> Caption {
        Caption {
            interval: Interval::new(s, e),
            text: text.into(),
        }
    }

    #[test]
    fn midpoint_rule() {
        let s = seq(10);
        let p = EventPartition::new(10, vec![5]);
        let caps: Vec<Caption> = (0..10).map(|i| cap(i as f64, i as f64 + 1.0, "x")).collect();
        let out = inherit_captions(&caps, &p, &s);
        assert_eq!(out.per_event[0].len(), 5);
        assert_eq!(out.per_event[1].len(), 5);
        assert_eq!(out.clamped, 0);

        let straddle = inherit_captions(&[cap(4.5, 5.5, "x")], &p, &s);
        assert_eq!(straddle.per_event[1].len(), 1);
        assert_eq!(straddle.per_event[1][0].interval, Interval::new(5.0, 5.5));
    }

    #[test]
    fn out_of_range_records_are_clamped() {
        let s = seq(4);
        let p = EventPartition::new(4, vec![2]);
        let out = inherit_captions(&[cap(-3.0, -1.0, "early"), cap(9.0, 11.0, "late")], &p, &s);
        assert_eq!(out.clamped, 2);
        assert_eq!(out.per_event[0][0].text, "early");
        assert_eq!(out.per_event[1][0].text, "late");
        assert_eq!(out.per_event[1][0].interval, Interval::new(4.0, 4.0));
    }

    #[test]
    fn object_rendering() {
        let s = seq(3);
        let p = EventPartition::single(3);
        let recs: Vec<ObjectRecord> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, n)| ObjectRecord {
                interval: Interval::new(i as f64, i as f64 + 1.0),
                objects: vec![n.to_string()],
            })
            .collect();
        let out = inherit_objects(&recs, &p, &s, 3);
        assert_eq!(render_objects(&out.per_event[0]), "a.\nb.\nc.");
        assert_eq!(object_interval_text(&out.per_event[0]), "a. b. c");
    }

    #[test]
    fn objects_capped() {
        let s = seq(1);
        let rec = ObjectRecord {
            interval: Interval::new(0.0, 1.0),
            objects: vec!["Sink".into(), "Dish rack".into(), "Square dish".into(), "Sponge".into()],
        };
        let out = inherit_objects(&[rec], &EventPartition::single(1), &s, DEFAULT_MAX_OBJECTS);
        assert_eq!(render_objects(&out.per_event[0]), "Sink; Dish rack; Square dish.");
    }

    #[test]
    fn caption_text_strips_periods() {
        let caps = [cap(0.0, 1.0, "C washes the plate."), cap(1.0, 2.0, "C picks a")];
        assert_eq!(caption_interval_text(&caps), "C washes the plate. C picks a");
        assert_eq!(render_captions(&caps), "C washes the plate. C picks a.");
    }

    #[test]
    fn word_budget() {
        let b = WordBudget::default();
        assert_eq!(b.for_duration(180.0), 180);
        assert_eq!(b.for_duration(45.0), 60);
        assert_eq!(b.for_duration(120.0), 120);
    }

    fn request(family: ModelFamily) -> SummaryRequest<'static> {
        SummaryRequest {
            question: "What is C doing?",
            event_duration_s: 63.0,
            words: 180,
            family,
            model_name: "m",
            temperature: 1.0,
        }
    }

    #[test]
    fn summaries_use_llm_verbatim() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["  scripted summary "])));
        let out = request(ModelFamily::Standard).summarize_actions(&[cap(0.0, 1.0, "C washes")], &gw);
        assert_eq!(out.text, "  scripted summary ");
        let prompt = out.prompt.unwrap();
        assert!(prompt.contains("The video is 63 seconds long."));
        assert!(prompt.contains("Here are the descriptions: C washes.\n Please give me a 180 words summary."));
    }

    #[test]
    fn empty_inputs_skip_the_call() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new())));
        let r = request(ModelFamily::Standard);
        assert_eq!(r.summarize_actions(&[], &gw).text, NO_ACTION_INFO);
        assert_eq!(r.summarize_objects(&[], &gw).text, NO_OBJECT_INFO);
        assert_eq!(gw.usage().remote_calls, 0);
    }

    #[test]
    fn failures_become_marker() {
        let backend = FnBackend::new("down", |_| Err(LlmError::Transport("x".into())));
        let gw = Gateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(1));
        let out = request(ModelFamily::StrictJsonCoaxing).summarize_actions(&[cap(0.0, 1.0, "x")], &gw);
        assert!(out.failed);
        assert_eq!(out.text, SUMMARY_UNAVAILABLE);
    }
}
