//! Self-reflective reasoning over event clips.
//!
//! Every clip is rated for answerability, clips are visited in descending
//! rating, and the working set is answered and self-assessed until the model
//! is confident or every clip has been merged. Runs of top-rated clips are
//! merged before the first answer.

use serde::{Deserialize, Serialize};
use vinsta_llm::{extract_json_field, ChatModel, ChatRequest};

use crate::model::{Answer, ClipInfoState, Flag, ReasoningRound, ReasoningTrace, Task, Termination};
use crate::spatial::render_captions;
use crate::spatial::render_objects;
use crate::templates::{number_word, ModelFamily, PromptTemplate, TemplateId};

pub const HISTORY_SEPARATOR: &str = "\n\n---\n\n";
pub const FALLBACK_INFORMATIVE: u8 = 2;
pub const FALLBACK_CONFIDENCE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonerConfig {
    pub model_name: String,
    #[serde(default = "default_family")]
    pub family: ModelFamily,
    /// Temperature for rating, answering and reflection.
    #[serde(default)]
    pub temperature: f64,
    /// Attempts per call when a completion cannot be parsed. Only sampled
    /// calls (temperature above zero) are repeated.
    #[serde(default = "default_parse_attempts")]
    pub parse_attempts: u32,
}

fn default_family() -> ModelFamily {
    ModelFamily::Standard
}

fn default_parse_attempts() -> u32 {
    3
}

impl ReasonerConfig {
    pub fn new(model_name: impl Into<String>, family: ModelFamily) -> Self {
        Self {
            model_name: model_name.into(),
            family,
            temperature: 0.0,
            parse_attempts: default_parse_attempts(),
        }
    }
}

/// Text block describing one clip.
pub fn lexical_node_state(clip: &ClipInfoState) -> String {
    let captions = if clip.action_captions.is_empty() {
        "(none)".to_string()
    } else {
        render_captions(&clip.action_captions)
    };
    let objects = if clip.object_detections.is_empty() {
        "(none)".to_string()
    } else {
        render_objects(&clip.object_detections)
    };
    format!(
        "{}\nAction captions: {}\nAction caption summary: {}\nObject detections:\n{}\nObject detection summary: {}",
        clip.temporal_prompt, captions, clip.action_summary, objects, clip.object_summary
    )
}

pub fn clip_header(total_clips: usize) -> String {
    format!("### Information about one of {} clips of the video\n", number_word(total_clips))
}

/// Concatenation of the selected clips in the order given.
pub fn whole_video_state(clips: &[&ClipInfoState], total_clips: usize) -> String {
    let header = clip_header(total_clips);
    clips
        .iter()
        .map(|c| format!("{header}{}", lexical_node_state(c)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Order in which clips are considered: descending score, ties in temporal
/// order.
pub fn merge_order(scores: &[u8]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].cmp(&scores[a]));
    order
}

/// The sets answered in each round, assuming no early stop. Round `r` is
/// answered with `plan[r]`; the loop ends at the first confident round.
pub fn round_plan(scores: &[u8]) -> Vec<Vec<usize>> {
    let order = merge_order(scores);
    let mut plan = Vec::new();
    let mut working = Vec::new();
    for (pos, &clip) in order.iter().enumerate() {
        working.push(clip);
        if order.get(pos + 1).is_some_and(|&next| scores[next] == 3) {
            continue;
        }
        let mut sorted = working.clone();
        sorted.sort_unstable();
        plan.push(sorted);
    }
    plan
}

fn parse_score(completion: &str, key: &str) -> Option<u8> {
    let value = extract_json_field(completion, key).ok()?;
    let n = match value {
        serde_json::Value::Number(n) => n.as_f64()?,
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    (n.fract() == 0.0 && (1.0..=3.0).contains(&n)).then_some(n as u8)
}

fn letter_index(c: char) -> Option<usize> {
    let c = c.to_ascii_uppercase();
    ('A'..='E').contains(&c).then(|| (c as u8 - b'A') as usize)
}

/// Option index from `{'best_answer': 'X'}`; the letter is case-folded and
/// may carry decoration such as `"(c)"` or `"C) ..."`.
pub fn parse_best_answer(completion: &str) -> Option<usize> {
    let value = extract_json_field(completion, "best_answer").ok()?;
    let s = match value {
        serde_json::Value::String(s) => s,
        _ => return None,
    };
    let s = s.trim().trim_start_matches(['(', '\'', '"', '[']);
    let mut chars = s.chars();
    let first = chars.next()?;
    if chars.next().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    letter_index(first)
}

/// Last-resort answer: the lexicographically smallest letter written as
/// `X)`, `(X)` or `'X'`, or `A` when there is none.
pub fn fallback_answer(completion: &str) -> usize {
    let chars: Vec<char> = completion.chars().collect();
    let mut best: Option<usize> = None;
    for i in 0..chars.len() {
        let c = chars[i];
        let Some(idx) = letter_index(c).filter(|_| c.is_ascii_uppercase()) else {
            continue;
        };
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let standalone = !before.is_some_and(|b| b.is_alphanumeric());
        let candidate = standalone
            && (after == Some(')') || (before == Some('\'') && after == Some('\'')));
        if candidate {
            best = Some(best.map_or(idx, |b| b.min(idx)));
        }
    }
    best.unwrap_or(0)
}

/// Outcome of one model call with parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange<T> {
    pub prompt: String,
    pub completion: String,
    pub value: T,
    pub fallback: bool,
}

pub struct Reasoner<'a> {
    llm: &'a dyn ChatModel,
    config: ReasonerConfig,
}

impl<'a> Reasoner<'a> {
    pub fn new(llm: &'a dyn ChatModel, config: ReasonerConfig) -> Self {
        Self { llm, config }
    }

    fn attempts(&self) -> u32 {
        if self.config.temperature > 0.0 {
            self.config.parse_attempts.max(1)
        } else {
            1
        }
    }

    /// Ask until `parse` succeeds or attempts run out. Transport failures
    /// yield an empty completion.
    fn ask<T>(&self, prompt: String, parse: impl Fn(&str) -> Option<T>) -> (String, String, Option<T>) {
        let req = ChatRequest::user_prompt(&self.config.model_name, prompt.clone(), self.config.temperature);
        let mut completion = String::new();
        for _ in 0..self.attempts() {
            completion = match self.llm.complete(&req) {
                Ok(c) => c.text,
                Err(e) => {
                    tracing::warn!("reasoner call failed: {e}");
                    String::new()
                }
            };
            if let Some(v) = parse(&completion) {
                return (prompt, completion, Some(v));
            }
        }
        (prompt, completion, None)
    }

    pub fn informative_prompt(&self, clip: &ClipInfoState, task: &Task, total_clips: usize) -> String {
        let state = lexical_node_state(clip);
        match &task.options {
            Some(options) => PromptTemplate::get(TemplateId::Answerability, self.config.family)
                .render(&option_bindings(
                    &[("lexical_node_state_representation", &state), ("question", &task.question)],
                    options,
                ))
                .expect("answerability template binds state, question, options"),
            None => {
                let n = number_word(total_clips);
                PromptTemplate::get(TemplateId::OpenAnswerability, self.config.family)
                    .render(&[
                        ("num_clips", &n),
                        ("lexical_node_state_representation", &state),
                        ("question", &task.question),
                    ])
                    .expect("open answerability template binds num_clips, state, question")
            }
        }
    }

    pub fn informative_eval(&self, clip: &ClipInfoState, task: &Task, total_clips: usize) -> Exchange<u8> {
        let prompt = self.informative_prompt(clip, task, total_clips);
        let (prompt, completion, score) = self.ask(prompt, |c| parse_score(c, "answerability"));
        Exchange {
            prompt,
            completion,
            value: score.unwrap_or(FALLBACK_INFORMATIVE),
            fallback: score.is_none(),
        }
    }

    pub fn qa_prompt(&self, whole_state: &str, task: &Task) -> String {
        match &task.options {
            Some(options) => PromptTemplate::get(TemplateId::Qa, self.config.family)
                .render(&option_bindings(
                    &[("whole_video_state", whole_state), ("question", &task.question)],
                    options,
                ))
                .expect("qa template binds state, question, options"),
            None => PromptTemplate::get(TemplateId::OpenQa, self.config.family)
                .render(&[("whole_video_state", whole_state), ("question", &task.question)])
                .expect("open qa template binds state and question"),
        }
    }

    pub fn answer_qa(&self, whole_state: &str, task: &Task) -> Exchange<Answer> {
        let prompt = self.qa_prompt(whole_state, task);
        if task.is_open() {
            let (prompt, completion, _) = self.ask(prompt, |c| (!c.trim().is_empty()).then_some(()));
            return Exchange {
                value: Answer::Text(completion.clone()),
                fallback: false,
                prompt,
                completion,
            };
        }
        let (prompt, completion, parsed) = self.ask(prompt, parse_best_answer);
        let value = Answer::Option(parsed.unwrap_or_else(|| fallback_answer(&completion)));
        Exchange {
            prompt,
            completion,
            value,
            fallback: parsed.is_none(),
        }
    }

    pub fn self_reflect(&self, qa_prompt: &str, qa_completion: &str) -> Exchange<u8> {
        let history = format!("{qa_prompt}{HISTORY_SEPARATOR}{qa_completion}");
        let prompt = PromptTemplate::get(TemplateId::Reflection, self.config.family)
            .render(&[("reasoning_history", &history)])
            .expect("reflection template binds reasoning_history");
        let (prompt, completion, score) = self.ask(prompt, |c| parse_score(c, "confidence"));
        Exchange {
            prompt,
            completion,
            value: score.unwrap_or(FALLBACK_CONFIDENCE),
            fallback: score.is_none(),
        }
    }

    /// Rate every clip, then merge and answer. Returns the trace with the
    /// informative scores written back into `clips`.
    pub fn run(&self, clips: &mut [ClipInfoState], task: &Task) -> ReasoningTrace {
        let mut flags = Vec::new();
        let total = clips.len();
        let mut scores = Vec::with_capacity(total);
        for clip in clips.iter_mut() {
            let ex = self.informative_eval(clip, task, total);
            if ex.fallback {
                flags.push(Flag::InformativeParseFallback);
            }
            clip.informative_score = Some(ex.value);
            scores.push(ex.value);
        }
        let mut trace = self.merge_and_answer(clips, &scores, task);
        flags.append(&mut trace.flags);
        flags.sort();
        flags.dedup();
        trace.flags = flags;
        trace
    }

    /// The merge loop over already-rated clips.
    pub fn merge_and_answer(&self, clips: &[ClipInfoState], scores: &[u8], task: &Task) -> ReasoningTrace {
        assert_eq!(clips.len(), scores.len(), "one score per clip");
        assert!(!clips.is_empty(), "at least one clip");
        let order = merge_order(scores);
        let mut flags = Vec::new();
        let mut rounds: Vec<ReasoningRound> = Vec::new();
        let mut working: Vec<usize> = Vec::new();
        let mut termination = Termination::Exhausted;

        for (pos, &clip) in order.iter().enumerate() {
            working.push(clip);
            if order.get(pos + 1).is_some_and(|&next| scores[next] == 3) {
                continue;
            }
            let mut merged = working.clone();
            merged.sort_unstable();
            let selected: Vec<&ClipInfoState> = merged.iter().map(|&i| &clips[i]).collect();
            let state = whole_video_state(&selected, clips.len());

            let qa = self.answer_qa(&state, task);
            if qa.fallback {
                flags.push(Flag::AnswerParseFallback);
            }
            let reflection = self.self_reflect(&qa.prompt, &qa.completion);
            if reflection.fallback {
                flags.push(Flag::ConfidenceParseFallback);
            }
            let confident = reflection.value == 3;
            rounds.push(ReasoningRound {
                merged_events: merged,
                qa_prompt: qa.prompt,
                qa_completion: qa.completion,
                parsed_answer: qa.value,
                reflection_prompt: reflection.prompt,
                reflection_completion: reflection.completion,
                confidence: reflection.value,
            });
            if confident {
                termination = Termination::Confident;
                break;
            }
        }

        let final_answer = rounds
            .last()
            .map(|r| r.parsed_answer.clone())
            .expect("the last clip always triggers a round");
        flags.sort();
        flags.dedup();
        ReasoningTrace {
            informative_scores: scores.to_vec(),
            merge_order: order,
            rounds,
            final_answer,
            termination,
            flags,
        }
    }
}

fn option_bindings<'a>(base: &[(&'a str, &'a str)], options: &'a [String]) -> Vec<(&'a str, &'a str)> {
    const NAMES: [&str; 5] = ["option_0", "option_1", "option_2", "option_3", "option_4"];
    let mut out = base.to_vec();
    out.extend(NAMES.iter().zip(options).map(|(n, o)| (*n, o.as_str())));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interval;
    use proptest::prelude::*;
    use std::sync::{Arc, Mutex};
    use vinsta_llm::{FnBackend, Gateway};

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_best_answer("{'best_answer': 'C'}"), Some(2));
        assert_eq!(parse_best_answer("{'best_answer': 'c'}"), Some(2));
        assert_eq!(parse_best_answer("{\"best_answer\": \"(D)\"}"), Some(3));
        assert_eq!(parse_best_answer("{'best_answer': 'E) the cat'}"), Some(4));
        assert_eq!(parse_best_answer("{'best_answer': 'Cat'}"), None);
        assert_eq!(parse_best_answer("{'best_answer': 'F'}"), None);
    }

    #[test]
    fn answer_fallback() {
        assert_eq!(fallback_answer("I think D) or maybe B) fits"), 1);
        assert_eq!(fallback_answer("either (C) or 'E'"), 2);
        assert_eq!(fallback_answer("no idea"), 0);
        assert_eq!(fallback_answer("BC) is not a letter"), 0);
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("…{'answerability': 3}", "answerability"), Some(3));
        assert_eq!(parse_score("I think {'answerability': '2'} overall", "answerability"), Some(2));
        assert_eq!(parse_score("{'answerability': 4}", "answerability"), None);
        assert_eq!(parse_score("{'answerability': 2.5}", "answerability"), None);
    }

    #[test]
    fn stable_order() {
        assert_eq!(merge_order(&[3, 3, 2, 1]), vec![0, 1, 2, 3]);
        assert_eq!(merge_order(&[1, 3, 1, 3]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn plans() {
        assert_eq!(round_plan(&[3, 3, 2, 1]), vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]]);
        assert_eq!(round_plan(&[2, 3, 3, 1]), vec![vec![1, 2], vec![0, 1, 2], vec![0, 1, 2, 3]]);
        assert_eq!(round_plan(&[1, 1]), vec![vec![0], vec![0, 1]]);
        assert_eq!(round_plan(&[3, 3, 3]), vec![vec![0, 1, 2]]);
    }

    proptest! {
        #[test]
        fn merge_order_is_stable(scores in prop::collection::vec(1u8..=3, 1..10)) {
            let order = merge_order(&scores);
            for w in order.windows(2) {
                prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
            }
        }
    }

    fn clip(i: usize) -> ClipInfoState {
        ClipInfoState {
            event_index: i,
            interval: Interval::new(i as f64 * 10.0, (i + 1) as f64 * 10.0),
            action_captions: vec![],
            object_detections: vec![],
            temporal_prompt: format!("Clip {} spans x.", i + 1),
            action_summary: "s".into(),
            object_summary: "o".into(),
            informative_score: None,
        }
    }

    fn task() -> Task {
        Task {
            task_id: "t".into(),
            video_id: "v".into(),
            question: "Q?".into(),
            options: Some((0..5).map(|i| format!("opt{i}")).collect()),
            ground_truth: None,
        }
    }

    /// Scores by clip number, confidences in order, answers cycling B, C, D...
    fn scripted(scores: Vec<u8>, confidences: Vec<u8>) -> Gateway {
        let conf = Arc::new(Mutex::new(confidences.into_iter()));
        let qa_round = Arc::new(Mutex::new(0usize));
        Gateway::new(Arc::new(FnBackend::new("script", move |req| {
            let p = req.prompt();
            if p.starts_with("# Assessment of Decision-Making") {
                let c = conf.lock().unwrap().next().unwrap_or(1);
                return Ok(format!("{{'confidence': {c}}}"));
            }
            if p.contains("evaluate the answerability") {
                let n = (1..=scores.len()).find(|n| p.contains(&format!("Clip {n} spans"))).unwrap();
                return Ok(format!("Reasoning... {{'answerability': {}}}", scores[n - 1]));
            }
            let mut r = qa_round.lock().unwrap();
            *r += 1;
            Ok(format!("{{'best_answer': '{}'}}", (b'A' + (*r % 5) as u8) as char))
        })))
    }

    fn run(scores: Vec<u8>, confidences: Vec<u8>) -> ReasoningTrace {
        let gw = scripted(scores.clone(), confidences);
        let mut clips: Vec<ClipInfoState> = (0..scores.len()).map(clip).collect();
        let trace = Reasoner::new(&gw, ReasonerConfig::new("m", ModelFamily::Standard)).run(&mut clips, &task());
        assert!(clips.iter().zip(&scores).all(|(c, s)| c.informative_score == Some(*s)));
        trace
    }

    fn sets(trace: &ReasoningTrace) -> Vec<Vec<usize>> {
        trace.rounds.iter().map(|r| r.merged_events.clone()).collect()
    }

    #[test]
    fn confident_first_round() {
        let t = run(vec![3, 3, 2, 1], vec![3]);
        assert_eq!(sets(&t), vec![vec![0, 1]]);
        assert_eq!(t.termination, Termination::Confident);
        assert_eq!(t.final_answer, Answer::Option(1));
    }

    #[test]
    fn three_rounds() {
        let t = run(vec![3, 3, 2, 1], vec![2, 2, 3]);
        assert_eq!(sets(&t), vec![vec![0, 1], vec![0, 1, 2], vec![0, 1, 2, 3]]);
        assert_eq!(t.termination, Termination::Confident);
    }

    #[test]
    fn exhaustion() {
        let t = run(vec![1, 1, 1, 1], vec![1, 1, 1, 1]);
        assert_eq!(t.rounds.len(), 4);
        assert_eq!(t.termination, Termination::Exhausted);
        assert_eq!(t.final_answer, Answer::Option(4));
        assert!(crate::model::Validate::validate(&t).is_valid());
    }

    #[test]
    fn reflection_sees_latest_round_only() {
        let t = run(vec![1, 1], vec![1, 3]);
        let r = &t.rounds[1];
        let history = format!("{}{HISTORY_SEPARATOR}{}", r.qa_prompt, r.qa_completion);
        assert!(r.reflection_prompt.contains(&history));
        assert_ne!(t.rounds[0].qa_completion, r.qa_completion);
        assert!(!r.reflection_prompt.contains(&t.rounds[0].qa_completion));
    }

    #[test]
    fn garbage_falls_back_and_flags() {
        let gw = Gateway::new(Arc::new(FnBackend::new("junk", |_| Ok("no json here".to_string()))));
        let mut clips: Vec<ClipInfoState> = (0..2).map(clip).collect();
        let t = Reasoner::new(&gw, ReasonerConfig::new("m", ModelFamily::Standard)).run(&mut clips, &task());
        assert_eq!(t.informative_scores, vec![2, 2]);
        assert_eq!(t.rounds.len(), 2);
        assert_eq!(t.final_answer, Answer::Option(0));
        assert_eq!(
            t.flags,
            vec![Flag::InformativeParseFallback, Flag::AnswerParseFallback, Flag::ConfidenceParseFallback]
        );
    }

    #[test]
    fn sampled_calls_retry_parsing() {
        let calls = Arc::new(Mutex::new(0));
        let seen = calls.clone();
        let gw = Gateway::new(Arc::new(FnBackend::new("flaky", move |_| {
            let mut n = seen.lock().unwrap();
            *n += 1;
            Ok(if *n < 3 { "hmm".into() } else { "{'confidence': 3}".into() })
        })));
        let mut config = ReasonerConfig::new("m", ModelFamily::Standard);
        config.temperature = 0.7;
        let ex = Reasoner::new(&gw, config).self_reflect("p", "c");
        assert_eq!(ex.value, 3);
        assert!(!ex.fallback);
        assert_eq!(*calls.lock().unwrap(), 3);
    }

    #[test]
    fn open_question_returns_text() {
        let gw = Gateway::new(Arc::new(FnBackend::new("open", |req| {
            Ok(if req.prompt().starts_with("# Assessment") {
                "{'confidence': 3}".into()
            } else if req.prompt().contains("'answerability'") {
                "{'answerability': 3}".into()
            } else {
                "The person is washing dishes.".into()
            })
        })));
        let mut open = task();
        open.options = None;
        let mut clips: Vec<ClipInfoState> = (0..2).map(clip).collect();
        let t = Reasoner::new(&gw, ReasonerConfig::new("m", ModelFamily::Standard)).run(&mut clips, &open);
        assert_eq!(t.final_answer, Answer::Text("The person is washing dishes.".into()));
        assert!(t.rounds[0].qa_prompt.contains("## Information about the most relevant clips"));
    }

    #[test]
    fn whole_state_headers() {
        let a = clip(0);
        let b = clip(2);
        let s = whole_video_state(&[&a, &b], 4);
        assert!(s.starts_with("### Information about one of four clips of the video\nClip 1 spans x.\n"));
        assert!(s.contains("\n\n### Information about one of four clips of the video\nClip 3 spans x.\n"));
        assert!(lexical_node_state(&a).ends_with("Object detections:\n(none)\nObject detection summary: o"));
    }
}
