//! Accuracy over result records: closed multiple choice, LLM-judged open
//! answers, and the comparison table for segmentation ablations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use vinsta_llm::{extract_json_field, ChatModel, ChatRequest};

use crate::model::{Answer, Flag, GroundTruth};
use crate::pipeline::ResultRecord;
use crate::templates::{ModelFamily, PromptTemplate, TemplateId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("task {task_id} has no ground truth")]
    MissingGroundTruth { task_id: String },
    #[error("ablation needs at least two labelled result sets, got {0}")]
    TooFewSets(usize),
    #[error("result set `{label}` contains no runs")]
    EmptySet { label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Accuracy {
    fn new(correct: usize, total: usize) -> Result<Self, EvalError> {
        if total == 0 {
            return Err(EvalError::Empty);
        }
        Ok(Self {
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
    }
}

/// Closed-form accuracy. Every record must carry a correctness flag.
pub fn eval_closed(records: &[ResultRecord]) -> Result<Accuracy, EvalError> {
    let mut correct = 0;
    for r in records {
        match r.correct {
            Some(c) => correct += usize::from(c),
            None => {
                return Err(EvalError::MissingGroundTruth {
                    task_id: r.task_id.clone(),
                })
            }
        }
    }
    Accuracy::new(correct, records.len())
}

/// Parse a judge completion. The JSON field wins; a lone true/false/yes/no
/// word is accepted as a fallback.
pub fn parse_verdict(completion: &str) -> Option<bool> {
    let from_word = |s: &str| match s.trim().trim_matches(['\'', '"', '.', '!']).to_ascii_lowercase().as_str() {
        "true" | "yes" | "correct" => Some(true),
        "false" | "no" | "incorrect" => Some(false),
        _ => None,
    };
    match extract_json_field(completion, "verdict") {
        Ok(serde_json::Value::Bool(b)) => Some(b),
        Ok(serde_json::Value::String(s)) => from_word(&s),
        _ => from_word(completion),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub task_id: String,
    pub prompt: String,
    pub completion: String,
    pub correct: bool,
    /// The verdict could not be parsed and was counted as incorrect.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub accuracy: Accuracy,
    pub verdicts: Vec<JudgeVerdict>,
    /// Input records with `correct` filled in and fallbacks flagged.
    pub records: Vec<ResultRecord>,
}

/// Judge each free-text prediction against its reference answer.
pub fn eval_open_llm_judge(
    records: &[ResultRecord],
    family: ModelFamily,
    model_name: &str,
    llm: &dyn ChatModel,
) -> Result<JudgeReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let template = PromptTemplate::get(TemplateId::OpenJudge, family);
    let mut verdicts = Vec::with_capacity(records.len());
    let mut judged = Vec::with_capacity(records.len());
    for r in records {
        let reference = match &r.ground_truth {
            Some(GroundTruth::Text(t)) => t.clone(),
            Some(GroundTruth::Index(i)) => i.to_string(),
            None => {
                return Err(EvalError::MissingGroundTruth {
                    task_id: r.task_id.clone(),
                })
            }
        };
        let prediction = match &r.predicted {
            Some(Answer::Text(t)) => t.clone(),
            Some(a) => a.to_string(),
            None => String::new(),
        };
        let prompt = template
            .render(&[
                ("question", &r.question),
                ("reference", &reference),
                ("prediction", &prediction),
            ])
            .expect("judge template binds question, reference, prediction");
        let (completion, verdict) = if r.predicted.is_none() {
            (String::new(), None)
        } else {
            let req = ChatRequest::user_prompt(model_name, prompt.clone(), 0.0);
            match llm.complete(&req) {
                Ok(c) => {
                    let v = parse_verdict(&c.text);
                    (c.text, v)
                }
                Err(e) => {
                    tracing::warn!("judge call failed for {}: {e}", r.task_id);
                    (String::new(), None)
                }
            }
        };
        let correct = verdict.unwrap_or(false);
        let mut record = r.clone();
        record.correct = Some(correct);
        if verdict.is_none() {
            record.flags.push(Flag::JudgeParseFallback);
            record.flags.sort();
            record.flags.dedup();
        }
        verdicts.push(JudgeVerdict {
            task_id: r.task_id.clone(),
            prompt,
            completion,
            correct,
            fallback: verdict.is_none(),
        });
        judged.push(record);
    }
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(JudgeReport {
        accuracy: Accuracy::new(correct, verdicts.len())?,
        verdicts,
        records: judged,
    })
}

/// Repeated runs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRuns {
    pub label: String,
    pub runs: Vec<Vec<ResultRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub runs: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stddev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub fn report_ablation(sets: &[LabelledRuns]) -> Result<AblationReport, EvalError> {
    if sets.len() < 2 {
        return Err(EvalError::TooFewSets(sets.len()));
    }
    let mut rows = Vec::with_capacity(sets.len());
    for set in sets {
        if set.runs.is_empty() {
            return Err(EvalError::EmptySet {
                label: set.label.clone(),
            });
        }
        let accuracies = set
            .runs
            .iter()
            .map(|run| eval_closed(run).map(|a| a.accuracy))
            .collect::<Result<Vec<f64>, _>>()?;
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let stddev = (accuracies.len() > 1)
            .then(|| (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        rows.push(AblationRow {
            label: set.label.clone(),
            runs: accuracies.len(),
            accuracies,
            mean,
            stddev,
        });
    }
    Ok(AblationReport { rows })
}

impl AblationReport {
    /// Aligned plain-text table, accuracies in percent.
    pub fn render_text(&self) -> String {
        let cells: Vec<(String, String, String)> = self
            .rows
            .iter()
            .map(|r| {
                let acc = match r.stddev {
                    Some(sd) => format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * sd),
                    None => format!("{:.2}", 100.0 * r.mean),
                };
                (r.label.clone(), r.runs.to_string(), acc)
            })
            .collect();
        let w0 = cells.iter().map(|c| c.0.chars().count()).max().unwrap_or(0).max("method".len());
        let w1 = cells.iter().map(|c| c.1.len()).max().unwrap_or(0).max("runs".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:>w1$}  accuracy (%)", "method", "runs");
        for (label, runs, acc) in cells {
            let pad = w0 - label.chars().count();
            let _ = writeln!(out, "{label}{}  {runs:>w1$}  {acc}", " ".repeat(pad));
        }
        out
    }
}
