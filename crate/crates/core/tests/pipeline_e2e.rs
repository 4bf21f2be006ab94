use std::path::{Path, PathBuf};

use cellpilot_core::config::Config;
use cellpilot_core::gateway::{Gateway, ScriptedBackend};
use cellpilot_core::optimizer::StepStatus;
use cellpilot_core::pipeline::{build_registry, replay_run, run_pipeline, RunRecord, RunStatus};
use cellpilot_core::task::{SubtaskKind, TaskRequest};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_t1(dir: &Path) -> RunRecord {
    let config = Config::from_file(&fixtures().join("t1.toml")).unwrap();
    let gateway = Gateway::new(Box::new(ScriptedBackend::from_file(&fixtures().join("t1.jsonl")).unwrap()));
    let request = TaskRequest::new(fixtures().join("toy.csv"), "integrate the two batches and annotate cell types");
    run_pipeline(&request, &config, gateway, &build_registry(&config).unwrap(), dir, &mut ()).unwrap()
}

#[test]
fn scripted_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_t1(dir.path());
    assert_eq!(rec.status, RunStatus::Completed, "{:?}", rec.error);
    let kinds: Vec<SubtaskKind> = rec.plan.as_ref().unwrap().subtasks.iter().map(|s| s.kind).collect();
    assert_eq!(
        kinds,
        [SubtaskKind::Preprocess, SubtaskKind::BatchCorrection, SubtaskKind::CellAnnotation, SubtaskKind::Visualization]
    );
    assert!(rec.step_results.iter().all(|s| s.status == StepStatus::Completed));
    let batch = &rec.step_results[1];
    assert_eq!(batch.trials.len(), 3);
    assert_eq!(batch.trials[0].attempts.len(), 2);
    assert_eq!(batch.chosen_trial, Some(2));
    let ann = &rec.step_results[2];
    assert_eq!(ann.trials.len(), 3);
    assert_eq!(ann.chosen_trial, Some(1));
    assert_eq!(rec.llm_calls, 15);
    assert_eq!(rec.live_llm_calls, 0);
    for f in ["plan.json", "memory.json", "report.md", "run.nb.json", "run.json", "transcript.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(dir.path().join("steps/step_2/trial_2/artifacts/batch_metrics.csv").is_file());
    assert!(dir.path().join("steps/step_4/trial_1/artifacts/umap_cell_type.png").is_file());
    assert_eq!(RunRecord::read(dir.path()).unwrap(), rec);
}

#[test]
fn replay_reproduces_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_t1(dir.path());
    let report = replay_run(dir.path(), true, None).unwrap();
    assert!(report.matches(), "{:?}", report.differences);
    assert_eq!(report.reproduced.live_llm_calls, 0);
    assert_eq!(report.reproduced.normalized(), rec.normalized());
}
