//! Per-task orchestration: segmentation, grounding, spatial inheritance and
//! summaries, then the reasoner. Batches run tasks on a bounded pool and
//! write results, traces and usage under the output directory.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use vinsta_llm::{
    ChatBackend, ChatModel, ChatRequest, Completion, DryRunBackend, Gateway, HttpBackend, HttpConfig, LlmError,
    ResponseCache, RuleBackend, UsageLedger,
};

use crate::config::{BackendKind, LlmSettings, PipelineSettings, RunConfig};
use crate::formats::{self, ArtifactDirs, FormatError};
use crate::grounding::{event_intervals, inherit_relevance, neutral_text, rank_moments, relevance_to_text};
use crate::model::{
    Answer, Caption, ClipInfoState, Flag, GroundTruth, GroundingTrack, ObjectRecord, ReasoningTrace, Task,
    FrameEmbeddingSeq,
};
use crate::reasoner::{Reasoner, ReasonerConfig};
use crate::segmentation::{segment, segment_uniform, Method, Segmentation, SegmentationConfig, SegmentationError};
use crate::spatial::{inherit_captions, inherit_objects, SummaryOutcome, SummaryRequest};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("segmentation: {0}")]
    Segmentation(#[from] SegmentationError),
    #[error("llm backend: {0}")]
    Backend(#[from] LlmError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Per-task call accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskUsage {
    pub calls: u64,
    pub cache_hits: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Wraps a model and counts what one task consumed.
pub struct Metered<'a> {
    inner: &'a dyn ChatModel,
    usage: Mutex<TaskUsage>,
}

impl<'a> Metered<'a> {
    pub fn new(inner: &'a dyn ChatModel) -> Self {
        Self {
            inner,
            usage: Mutex::new(TaskUsage::default()),
        }
    }

    pub fn usage(&self) -> TaskUsage {
        *self.usage.lock().unwrap()
    }
}

impl ChatModel for Metered<'_> {
    fn complete(&self, req: &ChatRequest) -> vinsta_llm::Result<Completion> {
        let out = self.inner.complete(req);
        let mut u = self.usage.lock().unwrap();
        u.calls += 1;
        match &out {
            Ok(c) => {
                u.cache_hits += u64::from(c.cached);
                u.prompt_tokens += c.usage.prompt_tokens.unwrap_or(0);
                u.completion_tokens += c.usage.completion_tokens.unwrap_or(0);
            }
            Err(_) => u.failures += 1,
        }
        out
    }
}

/// Inputs for one video. Optional streams are `None` when their file is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoArtifacts {
    pub seq: FrameEmbeddingSeq,
    pub captions: Option<Vec<Caption>>,
    pub objects: Option<Vec<ObjectRecord>>,
    pub grounding: Option<GroundingTrack>,
}

fn load_optional<T>(
    path: Option<PathBuf>,
    load: impl Fn(&Path) -> Result<T, FormatError>,
) -> Result<Option<T>, FormatError> {
    match path {
        Some(p) if p.exists() => load(&p).map(Some),
        _ => Ok(None),
    }
}

impl VideoArtifacts {
    pub fn load(dirs: &ArtifactDirs, task: &Task) -> Result<Self, FormatError> {
        Ok(Self {
            seq: formats::load_embeddings(&dirs.embeddings_for(&task.video_id))?,
            captions: load_optional(dirs.captions_for(&task.video_id), formats::load_captions)?,
            objects: load_optional(dirs.objects_for(&task.video_id), formats::load_objects)?,
            grounding: load_optional(dirs.grounding_for(&task.video_id, &task.task_id), formats::load_grounding)?,
        })
    }
}

/// Prompts and completions of the summarisation calls for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummaries {
    pub action: SummaryOutcome,
    pub object: SummaryOutcome,
}

/// Segmentation outcome as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub method: Method,
    pub num_frames: usize,
    pub boundaries: Vec<usize>,
    pub centers: Vec<usize>,
    pub warnings: Vec<String>,
}

impl From<&Segmentation> for SegmentationRecord {
    fn from(s: &Segmentation) -> Self {
        Self {
            method: s.method,
            num_frames: s.partition.num_frames,
            boundaries: s.partition.boundaries.clone(),
            centers: s.centers.clone(),
            warnings: s.warnings.clone(),
        }
    }
}

/// Clip states ready for the reasoner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembled {
    pub segmentation: SegmentationRecord,
    pub clips: Vec<ClipInfoState>,
    pub summaries: Vec<EventSummaries>,
    pub flags: Vec<Flag>,
}

/// Segment, falling back to uniform events when the configured method cannot
/// produce a partition.
pub fn segment_with_fallback(
    seq: &FrameEmbeddingSeq,
    config: &SegmentationConfig,
    flags: &mut Vec<Flag>,
) -> Result<Segmentation, SegmentationError> {
    match segment(seq, config) {
        Ok(s) => {
            if !s.warnings.is_empty() {
                flags.push(Flag::SegmentWithoutCenter);
            }
            Ok(s)
        }
        Err(SegmentationError::EmptySequence) => Err(SegmentationError::EmptySequence),
        Err(e) => {
            tracing::warn!("{} segmentation failed ({e}); using uniform events", config.method);
            flags.push(Flag::SegmentationFallback);
            segment_uniform(seq, config.num_events.clamp(1, seq.len()))
        }
    }
}

/// Build one [`ClipInfoState`] per event.
pub fn assemble(
    artifacts: &VideoArtifacts,
    task: &Task,
    settings: &PipelineSettings,
    llm: &dyn ChatModel,
) -> Result<Assembled, PipelineError> {
    let seq = &artifacts.seq;
    let mut flags = Vec::new();
    let seg = segment_with_fallback(seq, &settings.segmentation, &mut flags)?;
    let events = event_intervals(&seg.partition, seq);

    let relevance = match &artifacts.grounding {
        None => {
            flags.push(Flag::GroundingMissing);
            None
        }
        Some(track) => match rank_moments(track, settings.grounding.top_k) {
            Err(e) => {
                tracing::warn!("grounding unusable for {}: {e}", task.task_id);
                flags.push(Flag::GroundingMissing);
                None
            }
            Ok(moments) => {
                let report = inherit_relevance(&events, &moments);
                if report.zero_union {
                    flags.push(Flag::GroundingZeroDuration);
                    None
                } else {
                    Some(report.fractions)
                }
            }
        },
    };

    let captions = artifacts.captions.as_deref().unwrap_or(&[]);
    let objects = artifacts.objects.as_deref().unwrap_or(&[]);
    let captions = inherit_captions(captions, &seg.partition, seq);
    let objects = inherit_objects(objects, &seg.partition, seq, settings.spatial.max_objects);
    if captions.clamped > 0 {
        flags.push(Flag::CaptionClamped);
    }
    if objects.clamped > 0 {
        flags.push(Flag::ObjectClamped);
    }
    if captions.per_event.iter().any(Vec::is_empty) {
        flags.push(Flag::CaptionsMissing);
    }
    if objects.per_event.iter().any(Vec::is_empty) {
        flags.push(Flag::ObjectsMissing);
    }

    let budget = settings.spatial.word_budget();
    let mut clips = Vec::with_capacity(events.len());
    let mut summaries = Vec::with_capacity(events.len());
    for (i, interval) in events.iter().enumerate() {
        let temporal_prompt = match &relevance {
            Some(fractions) => relevance_to_text(fractions[i], i, interval),
            None => neutral_text(i, interval),
        };
        let request = SummaryRequest {
            question: &task.question,
            event_duration_s: interval.duration(),
            words: budget.for_duration(interval.duration()),
            family: settings.llm.family,
            model_name: &settings.llm.model_name,
            temperature: settings.llm.summary_temperature,
        };
        let action = request.summarize_actions(&captions.per_event[i], llm);
        let object = request.summarize_objects(&objects.per_event[i], llm);
        if action.failed || object.failed {
            flags.push(Flag::SummaryUnavailable);
        }
        clips.push(ClipInfoState {
            event_index: i,
            interval: *interval,
            action_captions: captions.per_event[i].clone(),
            object_detections: objects.per_event[i].clone(),
            temporal_prompt,
            action_summary: action.text.clone(),
            object_summary: object.text.clone(),
            informative_score: None,
        });
        summaries.push(EventSummaries { action, object });
    }

    flags.sort();
    flags.dedup();
    Ok(Assembled {
        segmentation: SegmentationRecord::from(&seg),
        clips,
        summaries,
        flags,
    })
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub video_id: String,
    pub task_id: String,
    pub question: String,
    pub predicted: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// Present exactly when the correctness is known: closed tasks with a
    /// ground truth, or open tasks after judging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub rounds_used: usize,
    pub informative_scores: Vec<u8>,
    pub confidences: Vec<u8>,
    pub usage: TaskUsage,
    pub flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Full per-task record written to `traces/<task_id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task: Task,
    pub assembled: Assembled,
    pub reasoning: ReasoningTrace,
}

/// Outcome of one task; `trace` is absent when a stage failed.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub record: ResultRecord,
    pub trace: Option<TaskTrace>,
}

fn closed_correct(task: &Task, predicted: Option<&Answer>) -> Option<bool> {
    if task.is_open() {
        return None;
    }
    let truth = task.ground_truth.as_ref()?.option_index();
    Some(matches!((predicted, truth), (Some(Answer::Option(p)), Some(t)) if *p == t))
}

pub fn reasoner_config(llm: &LlmSettings) -> ReasonerConfig {
    ReasonerConfig {
        temperature: llm.temperature,
        ..ReasonerConfig::new(llm.model_name.clone(), llm.family)
    }
}

/// Run every stage on pre-loaded artifacts.
pub fn run_with_artifacts(
    artifacts: &VideoArtifacts,
    task: &Task,
    settings: &PipelineSettings,
    llm: &dyn ChatModel,
) -> TaskOutcome {
    let metered = Metered::new(llm);
    let result = assemble(artifacts, task, settings, &metered).map(|mut assembled| {
        let reasoner = Reasoner::new(&metered, reasoner_config(&settings.llm));
        let reasoning = reasoner.run(&mut assembled.clips, task);
        (assembled, reasoning)
    });
    match result {
        Ok((assembled, reasoning)) => {
            let mut flags: Vec<Flag> = assembled.flags.iter().chain(&reasoning.flags).copied().collect();
            flags.sort();
            flags.dedup();
            let predicted = reasoning.final_answer.clone();
            let record = ResultRecord {
                video_id: task.video_id.clone(),
                task_id: task.task_id.clone(),
                question: task.question.clone(),
                correct: closed_correct(task, Some(&predicted)),
                predicted: Some(predicted),
                ground_truth: task.ground_truth.clone(),
                rounds_used: reasoning.rounds.len(),
                informative_scores: reasoning.informative_scores.clone(),
                confidences: reasoning.rounds.iter().map(|r| r.confidence).collect(),
                usage: metered.usage(),
                flags,
                error: None,
            };
            TaskOutcome {
                record,
                trace: Some(TaskTrace {
                    task: task.clone(),
                    assembled,
                    reasoning,
                }),
            }
        }
        Err(e) => failure(task, e.to_string(), metered.usage()),
    }
}

fn failure(task: &Task, error: String, usage: TaskUsage) -> TaskOutcome {
    tracing::error!("task {} failed: {error}", task.task_id);
    TaskOutcome {
        record: ResultRecord {
            video_id: task.video_id.clone(),
            task_id: task.task_id.clone(),
            question: task.question.clone(),
            predicted: None,
            ground_truth: task.ground_truth.clone(),
            correct: closed_correct(task, None),
            rounds_used: 0,
            informative_scores: Vec::new(),
            confidences: Vec::new(),
            usage,
            flags: vec![Flag::StageFailure],
            error: Some(error),
        },
        trace: None,
    }
}

/// Load the task's artifacts and run it. Never fails: errors become a
/// flagged record.
pub fn run_task(dirs: &ArtifactDirs, task: &Task, settings: &PipelineSettings, llm: &dyn ChatModel) -> TaskOutcome {
    match VideoArtifacts::load(dirs, task) {
        Ok(artifacts) => run_with_artifacts(&artifacts, task, settings, llm),
        Err(e) => failure(task, e.to_string(), TaskUsage::default()),
    }
}

/// Run tasks on `parallel` worker threads; outcomes keep task order.
pub fn run_tasks(
    dirs: &ArtifactDirs,
    tasks: &[Task],
    settings: &PipelineSettings,
    llm: &dyn ChatModel,
    parallel: usize,
) -> Result<Vec<TaskOutcome>, PipelineError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|task| run_task(dirs, task, settings, llm))
            .collect()
    }))
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const USAGE_FILE: &str = "usage.json";
pub const TRACES_DIR: &str = "traces";

pub fn trace_path(output_dir: &Path, task_id: &str) -> PathBuf {
    output_dir.join(TRACES_DIR).join(format!("{task_id}.json"))
}

/// Write `results.jsonl` and one trace per successful task.
pub fn write_outputs(output_dir: &Path, outcomes: &[TaskOutcome]) -> Result<(), PipelineError> {
    let traces = output_dir.join(TRACES_DIR);
    std::fs::create_dir_all(&traces).map_err(|source| PipelineError::Write {
        path: traces.clone(),
        source,
    })?;
    let records: Vec<&ResultRecord> = outcomes.iter().map(|o| &o.record).collect();
    formats::write_jsonl(&output_dir.join(RESULTS_FILE), &records)?;
    for outcome in outcomes {
        if let Some(trace) = &outcome.trace {
            formats::write_json(&trace_path(output_dir, &trace.task.task_id), trace)?;
        }
    }
    Ok(())
}

pub fn write_usage(output_dir: &Path, usage: &UsageLedger) -> Result<(), PipelineError> {
    let path = output_dir.join(USAGE_FILE);
    usage.write_json(&path).map_err(|source| PipelineError::Write { path, source })
}

/// Outcome of a batch run.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub outcomes: Vec<TaskOutcome>,
    pub usage: UsageLedger,
}

impl BatchReport {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.record.failed()).count()
    }
}

/// Run every task of the manifest and write results, traces and usage.
pub fn run_batch(config: &RunConfig, gateway: &Gateway) -> Result<BatchReport, PipelineError> {
    let manifest = formats::Manifest::load(&config.manifest)?;
    let tasks = manifest.load_tasks(&config.manifest)?;
    let settings = config.pipeline_settings();
    let outcomes = run_tasks(&config.artifacts, &tasks, &settings, gateway, config.parallel)?;
    write_outputs(&config.output_dir, &outcomes)?;
    let usage = gateway.usage();
    write_usage(&config.output_dir, &usage)?;
    Ok(BatchReport { outcomes, usage })
}

/// The backend selected by the settings.
pub fn build_backend(llm: &LlmSettings) -> Result<Arc<dyn ChatBackend>, LlmError> {
    match llm.backend {
        BackendKind::Script => {
            let path = llm
                .script
                .as_ref()
                .ok_or_else(|| LlmError::InvalidRequest("script backend needs a script path".into()))?;
            Ok(Arc::new(RuleBackend::from_file(path)?))
        }
        BackendKind::Http => {
            let mut config = HttpConfig {
                timeout_secs: llm.timeout_secs,
                ..HttpConfig::default()
            };
            if let Some(url) = &llm.base_url {
                config.base_url = url.clone();
            }
            if let Some(env) = &llm.api_key_env {
                config.api_key_env = (!env.is_empty()).then(|| env.clone());
            }
            Ok(Arc::new(HttpBackend::new(&config)?))
        }
    }
}

/// Wrap a backend with the cache and concurrency bound from the settings.
pub fn build_gateway(llm: &LlmSettings, backend: Arc<dyn ChatBackend>) -> Result<Gateway, LlmError> {
    let mut gateway = Gateway::new(backend).with_max_in_flight(llm.max_in_flight.max(1));
    if let Some(dir) = &llm.cache_dir {
        gateway = gateway.with_cache(ResponseCache::open(dir)?);
    }
    Ok(gateway)
}

/// A gateway over a recording backend that answers every call with an empty
/// completion; every prompt the pipeline would send is kept.
pub fn dry_run_gateway() -> (Gateway, Arc<DryRunBackend>) {
    let backend = Arc::new(DryRunBackend::new());
    (Gateway::new(backend.clone()), backend)
}
