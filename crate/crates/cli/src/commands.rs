//! Verb implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use serde::Serialize;
use vinsta_core::eval::{eval_closed, eval_open_llm_judge, report_ablation, LabelledRuns};
use vinsta_core::formats::{self, load_embeddings, load_grounding, load_task, read_jsonl};
use vinsta_core::grounding::{event_intervals, inherit_relevance, neutral_text, rank_moments, relevance_to_text};
use vinsta_core::model::Flag;
use vinsta_core::pipeline::{
    assemble, run_batch, run_tasks, trace_path, ResultRecord, TaskTrace, VideoArtifacts, RESULTS_FILE,
};
use vinsta_core::segmentation::{segment, Method, SegmentationConfig};

use crate::settings::{gateway, pipeline_settings, run_config};
use crate::{CliError, Command, GlobalArgs, Status};

pub fn dispatch(global: &GlobalArgs, command: Command) -> Result<Status, CliError> {
    match command {
        Command::Segment(a) => cmd_segment(global, &a),
        Command::Ground(a) => cmd_ground(global, &a),
        Command::Assemble(a) => cmd_assemble(global, &a),
        Command::Answer(a) => cmd_answer(global, &a),
        Command::Eval(a) => cmd_eval(global, &a),
        Command::Ablate(a) => cmd_ablate(global, &a),
        Command::Trace {
            action: TraceAction::Show(a),
        } => cmd_trace_show(global, &a),
    }
}

/// Write to standard output; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::run(e)),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::run)?;
    emit(&format!("{text}\n"))
}

fn segmentation_config(global: &GlobalArgs, knn_k: Option<usize>) -> Result<SegmentationConfig, CliError> {
    let mut config = pipeline_settings(global)?.segmentation;
    if knn_k.is_some() {
        config.knn_k = knn_k;
    }
    Ok(config)
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Embeddings file (binary, with its JSON sidecar).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Neighbours used for the density.
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Write per-frame density diagnostics (JSON lines) here.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Serialize)]
struct EventView {
    index: usize,
    start_frame: usize,
    end_frame: usize,
    start_s: f64,
    end_s: f64,
}

#[derive(Serialize)]
struct SegmentView {
    video_id: String,
    method: Method,
    num_frames: usize,
    boundaries: Vec<usize>,
    centers: Vec<usize>,
    events: Vec<EventView>,
    warnings: Vec<String>,
}

fn cmd_segment(global: &GlobalArgs, args: &SegmentArgs) -> Result<Status, CliError> {
    let config = segmentation_config(global, args.knn_k)?;
    let seq = load_embeddings(&args.embeddings).map_err(CliError::config)?;
    let seg = segment(&seq, &config).map_err(CliError::run)?;
    if let Some(path) = &args.dump {
        let mut file = std::fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))
            .map_err(CliError::run)?;
        seg.write_diagnostics(&seq, &mut file).map_err(CliError::run)?;
    }
    let events = seg
        .partition
        .events()
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let iv = seq.range_interval(&r);
            EventView {
                index,
                start_frame: r.start,
                end_frame: r.end,
                start_s: iv.start_s,
                end_s: iv.end_s,
            }
        })
        .collect();
    print_json(&SegmentView {
        video_id: seq.video_id.clone(),
        method: seg.method,
        num_frames: seq.len(),
        boundaries: seg.partition.boundaries.clone(),
        centers: seg.centers.clone(),
        events,
        warnings: seg.warnings.clone(),
    })?;
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Grounding document for the query.
    #[arg(long)]
    pub grounding: PathBuf,
    /// Moments kept from the grounding track.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub knn_k: Option<usize>,
}

#[derive(Serialize)]
struct RelevanceView {
    index: usize,
    start_s: f64,
    end_s: f64,
    fraction: Option<f64>,
    temporal_prompt: String,
}

fn cmd_ground(global: &GlobalArgs, args: &GroundArgs) -> Result<Status, CliError> {
    let settings = pipeline_settings(global)?;
    let config = segmentation_config(global, args.knn_k)?;
    let seq = load_embeddings(&args.embeddings).map_err(CliError::config)?;
    let track = load_grounding(&args.grounding).map_err(CliError::config)?;
    let seg = segment(&seq, &config).map_err(CliError::run)?;
    let events = event_intervals(&seg.partition, &seq);
    let top_k = args.top_k.unwrap_or(settings.grounding.top_k);
    let moments = rank_moments(&track, top_k).map_err(CliError::run)?;
    let report = inherit_relevance(&events, &moments);
    let views: Vec<RelevanceView> = events
        .iter()
        .enumerate()
        .map(|(i, iv)| {
            let fraction = (!report.zero_union).then(|| report.fractions[i]);
            RelevanceView {
                index: i,
                start_s: iv.start_s,
                end_s: iv.end_s,
                fraction,
                temporal_prompt: match fraction {
                    Some(f) => relevance_to_text(f, i, iv),
                    None => neutral_text(i, iv),
                },
            }
        })
        .collect();
    print_json(&views)?;
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// Task document.
    #[arg(long)]
    pub task: PathBuf,
    /// Write the clip states here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn cmd_assemble(global: &GlobalArgs, args: &AssembleArgs) -> Result<Status, CliError> {
    let config = run_config(global)?;
    let task = load_task(&args.task).map_err(CliError::config)?;
    let artifacts = VideoArtifacts::load(&config.artifacts, &task).map_err(CliError::run)?;
    let settings = config.pipeline_settings();
    let (gw, _) = gateway(global, &settings.llm)?;
    let assembled = assemble(&artifacts, &task, &settings, &gw).map_err(CliError::run)?;
    match &args.out {
        Some(path) => formats::write_json(path, &assembled).map_err(CliError::run)?,
        None => print_json(&assembled)?,
    }
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct AnswerArgs {
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const PROMPTS_FILE: &str = "prompts.jsonl";

#[derive(Serialize)]
struct PromptLine<'a> {
    model: &'a str,
    temperature: f64,
    prompt: &'a str,
}

fn cmd_answer(global: &GlobalArgs, args: &AnswerArgs) -> Result<Status, CliError> {
    let mut config = run_config(global)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))
        .map_err(CliError::run)?;
    let (gw, recorder) = gateway(global, &config.llm)?;

    if let Some(recorder) = recorder {
        let manifest = formats::Manifest::load(&config.manifest).map_err(CliError::config)?;
        let tasks = manifest.load_tasks(&config.manifest).map_err(CliError::config)?;
        let settings = config.pipeline_settings();
        run_tasks(&config.artifacts, &tasks, &settings, &gw, 1).map_err(CliError::run)?;
        let requests = recorder.requests();
        let lines: Vec<PromptLine> = requests
            .iter()
            .map(|r| PromptLine {
                model: &r.model_name,
                temperature: r.temperature,
                prompt: r.prompt(),
            })
            .collect();
        let path = config.output_dir.join(PROMPTS_FILE);
        formats::write_jsonl(&path, &lines).map_err(CliError::run)?;
        emit(&format!("dry run: {} prompts for {} tasks written to {}\n", lines.len(), tasks.len(), path.display()))?;
        return Ok(Status::Ok);
    }

    let report = run_batch(&config, &gw).map_err(|e| match e {
        vinsta_core::pipeline::PipelineError::Format(f) => CliError::config(f),
        other => CliError::run(other),
    })?;
    let failures = report.failures();
    let records: Vec<ResultRecord> = report.outcomes.iter().map(|o| o.record.clone()).collect();
    let graded: Vec<ResultRecord> = records.iter().filter(|r| r.correct.is_some()).cloned().collect();
    let mut line = format!("{} tasks, {} failed", records.len(), failures);
    if let Ok(acc) = eval_closed(&graded) {
        let _ = write!(line, ", accuracy {:.4} ({}/{})", acc.accuracy, acc.correct, acc.total);
    }
    let _ = write!(
        line,
        "; {} model calls ({} cached); results in {}",
        report.usage.remote_calls + report.usage.cache_hits,
        report.usage.cache_hits,
        config.output_dir.join(RESULTS_FILE).display()
    );
    emit(&format!("{line}\n"))?;
    Ok(if failures > 0 { Status::PartialFailure } else { Status::Ok })
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results file; defaults to the configured output directory.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Judge free-text answers with the chat backend.
    #[arg(long)]
    pub open: bool,
    /// Write judged records (with `--open`) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn results_path(global: &GlobalArgs, explicit: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => Ok(run_config(global)?.output_dir.join(RESULTS_FILE)),
    }
}

fn load_results(path: &Path) -> Result<Vec<ResultRecord>, CliError> {
    read_jsonl(path).map_err(CliError::config)
}

fn cmd_eval(global: &GlobalArgs, args: &EvalArgs) -> Result<Status, CliError> {
    let path = results_path(global, &args.results)?;
    let records = load_results(&path)?;
    if args.open {
        let llm = match &global.config {
            Some(_) => run_config(global)?.llm,
            None => pipeline_settings(global)?.llm,
        };
        let (gw, _) = gateway(global, &llm)?;
        let report = eval_open_llm_judge(&records, llm.family, &llm.model_name, &gw).map_err(CliError::run)?;
        if let Some(out) = &args.out {
            formats::write_jsonl(out, &report.records).map_err(CliError::run)?;
        }
        let fallbacks = report.verdicts.iter().filter(|v| v.fallback).count();
        if args.json {
            print_json(&report.accuracy)?;
        } else {
            emit(&format!(
                "open-ended accuracy {:.4} ({}/{}), {} unparseable verdicts\n",
                report.accuracy.accuracy, report.accuracy.correct, report.accuracy.total, fallbacks
            ))?;
        }
        return Ok(Status::Ok);
    }
    let acc = eval_closed(&records).map_err(CliError::run)?;
    if args.json {
        print_json(&acc)?;
    } else {
        emit(&format!("accuracy {:.4} ({}/{})\n", acc.accuracy, acc.correct, acc.total))?;
    }
    Ok(Status::Ok)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Existing results as `label=results.jsonl`; repeat a label for more runs.
    #[arg(long = "set", value_name = "LABEL=PATH")]
    pub sets: Vec<String>,
    /// Methods to run through the pipeline (needs --config).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// Runs per method.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn cmd_ablate(global: &GlobalArgs, args: &AblateArgs) -> Result<Status, CliError> {
    if args.sets.is_empty() == args.methods.is_empty() {
        return Err(CliError::config(anyhow!("give either --set LABEL=PATH ... or --methods")));
    }
    let mut grouped: BTreeMap<String, Vec<Vec<ResultRecord>>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut status = Status::Ok;
    if !args.sets.is_empty() {
        for spec in &args.sets {
            let (label, path) = spec
                .split_once('=')
                .ok_or_else(|| CliError::config(anyhow!("--set expects LABEL=PATH, got `{spec}`")))?;
            if !order.iter().any(|l| l == label) {
                order.push(label.to_string());
            }
            grouped.entry(label.to_string()).or_default().push(load_results(Path::new(path))?);
        }
    } else {
        if args.runs == 0 {
            return Err(CliError::config(anyhow!("--runs must be at least 1")));
        }
        let base = run_config(global)?;
        let (gw, _) = gateway(global, &base.llm)?;
        for &method in &args.methods {
            for run in 0..args.runs {
                let mut config = base.clone();
                config.segmentation.method = method;
                config.seed = base.seed + run as u64;
                config.segmentation.seed = config.seed;
                config.output_dir = base.output_dir.join("ablation").join(method.as_str()).join(format!("run-{run}"));
                std::fs::create_dir_all(&config.output_dir).map_err(CliError::run)?;
                let report = run_batch(&config, &gw).map_err(CliError::run)?;
                if report.failures() > 0 {
                    status = Status::PartialFailure;
                }
                let label = method.as_str().to_string();
                if !order.contains(&label) {
                    order.push(label.clone());
                }
                grouped
                    .entry(label)
                    .or_default()
                    .push(report.outcomes.into_iter().map(|o| o.record).collect());
            }
        }
    }
    let sets: Vec<LabelledRuns> = order
        .iter()
        .map(|label| LabelledRuns {
            label: label.clone(),
            runs: grouped.remove(label).unwrap_or_default(),
        })
        .collect();
    let report = report_ablation(&sets).map_err(CliError::config)?;
    emit(&report.render_text())?;
    if let Some(path) = &args.json {
        formats::write_json(path, &report).map_err(CliError::run)?;
    }
    Ok(status)
}

#[derive(Debug, Subcommand)]
pub enum TraceAction {
    /// Print a task trace.
    Show(TraceShowArgs),
}

#[derive(Debug, Args)]
pub struct TraceShowArgs {
    /// Task id (looked up in the configured output directory) or trace path.
    pub task: String,
    /// Include prompts and completions.
    #[arg(long)]
    pub full: bool,
}

fn cmd_trace_show(global: &GlobalArgs, args: &TraceShowArgs) -> Result<Status, CliError> {
    let direct = PathBuf::from(&args.task);
    let path = if direct.is_file() {
        direct
    } else {
        trace_path(&run_config(global)?.output_dir, &args.task)
    };
    let trace: TaskTrace = formats::read_json(&path).map_err(CliError::config)?;
    emit(&render_trace(&trace, args.full))?;
    Ok(Status::Ok)
}

pub fn render_trace(trace: &TaskTrace, full: bool) -> String {
    let mut out = String::new();
    let t = &trace.task;
    let _ = writeln!(out, "task {} (video {})", t.task_id, t.video_id);
    let _ = writeln!(out, "question: {}", t.question);
    if let Some(options) = &t.options {
        for (i, o) in options.iter().enumerate() {
            let _ = writeln!(out, "  {}) {o}", (b'A' + i as u8) as char);
        }
    }
    let seg = &trace.assembled.segmentation;
    let _ = writeln!(
        out,
        "segmentation: {} over {} frames, boundaries {:?}, centers {:?}",
        seg.method, seg.num_frames, seg.boundaries, seg.centers
    );
    for w in &seg.warnings {
        let _ = writeln!(out, "  warning: {w}");
    }
    let _ = writeln!(out, "clips:");
    for clip in &trace.assembled.clips {
        let score = clip.informative_score.map_or("-".to_string(), |s| s.to_string());
        let _ = writeln!(out, "  [{}] informative {score}: {}", clip.event_index, clip.temporal_prompt);
        if full {
            let _ = writeln!(out, "      action summary: {}", clip.action_summary);
            let _ = writeln!(out, "      object summary: {}", clip.object_summary);
        }
    }
    let r = &trace.reasoning;
    let _ = writeln!(out, "merge order: {:?}", r.merge_order);
    for (i, round) in r.rounds.iter().enumerate() {
        let _ = writeln!(
            out,
            "round {}: clips {:?} -> answer {}, confidence {}",
            i + 1,
            round.merged_events,
            round.parsed_answer,
            round.confidence
        );
        if full {
            let _ = writeln!(out, "--- qa prompt ---\n{}", round.qa_prompt);
            let _ = writeln!(out, "--- qa completion ---\n{}", round.qa_completion);
            let _ = writeln!(out, "--- reflection completion ---\n{}", round.reflection_completion);
        }
    }
    let _ = writeln!(out, "final answer: {} ({:?})", r.final_answer, r.termination);
    let mut flags: Vec<Flag> = trace.assembled.flags.iter().chain(&r.flags).copied().collect();
    flags.sort();
    flags.dedup();
    if !flags.is_empty() {
        let names: Vec<String> = flags
            .iter()
            .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .collect();
        let _ = writeln!(out, "flags: {}", names.join(", "));
    }
    out
}
