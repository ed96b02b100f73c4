//! Fixture video through the whole pipeline with the scripted rule backend.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use vinsta_core::config::RunConfig;
use vinsta_core::model::{Answer, Flag, Termination};
use vinsta_core::pipeline::{build_backend, build_gateway, run_batch, trace_path, TaskTrace, RESULTS_FILE};
use vinsta_llm::{Gateway, RuleBackend};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn config(out: &Path) -> RunConfig {
    let mut c = RunConfig::load(&fixture().join("config.toml")).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn run_once(out: &Path) -> RunConfig {
    let c = config(out);
    let gateway = build_gateway(&c.llm, build_backend(&c.llm).unwrap()).unwrap();
    let report = run_batch(&c, &gateway).unwrap();
    assert_eq!(report.failures(), 0, "{:?}", report.outcomes[0].record.error);
    c
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn golden_result_record() {
    let dir = tempfile::tempdir().unwrap();
    run_once(dir.path());
    let got = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let expected =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/e2e_results.jsonl"))
            .unwrap();
    assert_eq!(got, expected);
}

#[test]
fn hand_verified_trace() {
    let dir = tempfile::tempdir().unwrap();
    run_once(dir.path());
    let text = std::fs::read_to_string(trace_path(dir.path(), "vid1-q1")).unwrap();
    let trace: TaskTrace = serde_json::from_str(&text).unwrap();
    assert_eq!(trace.assembled.segmentation.boundaries, vec![4, 8]);
    assert!(trace.assembled.flags.is_empty(), "{:?}", trace.assembled.flags);
    let r = &trace.reasoning;
    assert_eq!(r.informative_scores, vec![2, 3, 1]);
    assert_eq!(r.merge_order, vec![1, 0, 2]);
    let merged: Vec<_> = r.rounds.iter().map(|x| x.merged_events.clone()).collect();
    assert_eq!(merged, vec![vec![1], vec![0, 1]]);
    assert_eq!(r.rounds.iter().map(|x| x.confidence).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(r.final_answer, Answer::Option(2));
    assert_eq!(r.termination, Termination::Confident);

    let clip1 = &trace.assembled.clips[1];
    assert_eq!(clip1.action_captions.len(), 4);
    assert_eq!(clip1.object_detections[1].objects, vec!["Fridge", "Milk bottle", "Egg carton"]);
    // moments [4,6] and [6,8] of the top five lie in clip 2; union covers 10 s
    assert_eq!(
        clip1.temporal_prompt,
        "Clip 2 spans 4.0s–8.0s. Query-relevance: medium (40.0% of the retrieved key moments fall in this clip)."
    );
    assert!(r.rounds[1].qa_prompt.contains("Clip 1 spans 0.0s–4.0s"));
    assert!(!r.rounds[1].qa_prompt.contains("Clip 3 spans"));
}

#[test]
fn two_runs_produce_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_once(a.path());
    run_once(b.path());
    for rel in [RESULTS_FILE.to_string(), "traces/vid1-q1.json".to_string(), "usage.json".to_string()] {
        assert_eq!(digest(&a.path().join(&rel)), digest(&b.path().join(&rel)), "{rel}");
    }
}

#[test]
fn missing_grounding_degrades() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.artifacts.grounding = Some(dir.path().join("nowhere"));
    let gateway = Gateway::new(Arc::new(RuleBackend::from_file(c.llm.script.as_ref().unwrap()).unwrap()));
    let report = run_batch(&c, &gateway).unwrap();
    let record = &report.outcomes[0].record;
    assert!(record.flags.contains(&Flag::GroundingMissing));
    assert_eq!(record.error, None);
    let trace = report.outcomes[0].trace.as_ref().unwrap();
    assert!(trace.assembled.clips[0].temporal_prompt.ends_with("unknown (no temporal grounding available)."));
}
