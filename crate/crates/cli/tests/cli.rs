use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn prompts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/prompts")
}

fn cellpilot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellpilot")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scripted_run(config: &Path, script: &Path, out: &Path) -> Output {
    cellpilot(&[
        "run",
        "--data",
        path_str(&fixtures().join("toy.csv")),
        "--task",
        "annotate cell types",
        "--config",
        path_str(config),
        "--llm",
        &format!("scripted:{}", script.display()),
        "--out",
        path_str(out),
    ])
}

#[test]
fn scripted_run_succeeds_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = scripted_run(&fixtures().join("t1.toml"), &fixtures().join("t1.jsonl"), &run);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("plan (4 steps)"), "{text}");
    assert!(text.contains("chose trial 2"), "{text}");
    assert!(text.contains("report.md"), "{text}");
    assert!(run.join("report.md").is_file());
}

#[test]
fn missing_task_is_usage_error() {
    let out = cellpilot(&["run", "--data", path_str(&fixtures().join("toy.csv"))]);
    assert_eq!(code(&out), 64);
    assert!(stderr(&out).contains("--task"));
}

#[test]
fn unknown_llm_source_is_usage_error() {
    let out = cellpilot(&["run", "--data", "x.csv", "--task", "t", "--llm", "openai"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&cellpilot(&["--help"])), 0);
}

#[test]
fn partial_run_exits_two_and_report_names_failed_step() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = scripted_run(&fixtures().join("t2.toml"), &fixtures().join("t2.jsonl"), &run);
    assert_eq!(code(&out), 2, "{}{}", stdout(&out), stderr(&out));
    let report = fs::read_to_string(run.join("report.md")).unwrap();
    assert!(report.contains("**partial**"), "{report}");
    assert!(report.contains("| 2 | Visualization | visualization | failed |"), "{report}");
}

#[test]
fn replay_of_untouched_run_matches() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&scripted_run(&fixtures().join("t1.toml"), &fixtures().join("t1.jsonl"), &run)), 0);
    let out = cellpilot(&["replay", path_str(&run), "--strict"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
}

#[test]
fn replay_of_partial_run_reproduces_partial() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&scripted_run(&fixtures().join("t2.toml"), &fixtures().join("t2.jsonl"), &run)), 2);
    let out = cellpilot(&["replay", path_str(&run)]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("partial"));
}

#[test]
fn strict_replay_after_prompt_edit_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("prompts");
    fs::create_dir(&pdir).unwrap();
    fs::copy(prompts().join("planner.txt"), pdir.join("planner.txt")).unwrap();
    let base = fs::read_to_string(fixtures().join("t1.toml")).unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, format!("prompts_dir = {:?}\n{base}", path_str(&pdir))).unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&scripted_run(&config, &fixtures().join("t1.jsonl"), &run)), 0);

    let mut text = fs::read(pdir.join("planner.txt")).unwrap();
    let i = text.iter().position(|b| b.is_ascii_lowercase()).unwrap();
    text[i] = text[i].to_ascii_uppercase();
    fs::write(pdir.join("planner.txt"), text).unwrap();

    let lax = cellpilot(&["replay", path_str(&run)]);
    assert_eq!(code(&lax), 0, "{}{}", stdout(&lax), stderr(&lax));
    let strict = cellpilot(&["replay", path_str(&run), "--strict"]);
    assert_eq!(code(&strict), 3, "{}{}", stdout(&strict), stderr(&strict));
    assert!(stdout(&strict).contains("fingerprint"), "{}", stdout(&strict));
}

#[test]
fn report_is_rerendered() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&scripted_run(&fixtures().join("t1.toml"), &fixtures().join("t1.jsonl"), &run)), 0);
    let original = fs::read_to_string(run.join("report.md")).unwrap();
    fs::remove_file(run.join("report.md")).unwrap();
    assert_eq!(code(&cellpilot(&["report", path_str(&run)])), 0);
    assert_eq!(fs::read_to_string(run.join("report.md")).unwrap(), original);
}

#[test]
fn score_annotation_prints_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("matches.csv");
    let mut text = String::from("cluster,match\n");
    for (i, class) in ["fully_match"; 10].iter().chain(&["partial_match"; 5]).chain(&["mismatch"]).enumerate() {
        text.push_str(&format!("c{i},{class}\n"));
    }
    fs::write(&pairs, text).unwrap();
    let csv = dir.path().join("out.csv");
    let out = cellpilot(&["score", "annotation", "--pairs", path_str(&pairs), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("0.78125"), "{}", stdout(&out));
    assert!(fs::read_to_string(&csv).unwrap().contains("overall,0.78125"));
}

#[test]
fn score_annotation_malformed_row_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("matches.csv");
    fs::write(&pairs, "cluster,match\nc0,fully_match\nc1,sort_of\n").unwrap();
    let out = cellpilot(&["score", "annotation", "--pairs", path_str(&pairs)]);
    assert_eq!(code(&out), 65);
    assert!(stderr(&out).contains(":3:2:"), "{}", stderr(&out));
}

fn write_trajectory(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let net = dir.join(format!("{name}_network.csv"));
    let pos = dir.join(format!("{name}_positions.csv"));
    fs::write(&net, "from,to,length\nA,B,1\nB,C,1\nB,D,2\n").unwrap();
    fs::write(
        &pos,
        "cell_id,milestone,percentage\n\
         c1,A,1\n\
         c2,A,0.5\nc2,B,0.5\n\
         c3,B,1\n\
         c4,B,0.3\nc4,C,0.7\n\
         c5,C,1\n\
         c6,B,0.6\nc6,D,0.4\n\
         c7,D,1\n",
    )
    .unwrap();
    (net, pos)
}

#[test]
fn score_trajectory_identical_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let (net, pos) = write_trajectory(dir.path(), "ref");
    let imp = dir.path().join("importance.csv");
    fs::write(&imp, "feature,score\ng1,0.9\ng2,0.5\ng3,0.1\ng4,0.3\n").unwrap();
    let out = cellpilot(&[
        "score",
        "trajectory",
        "--ref-network",
        path_str(&net),
        "--ref-positions",
        path_str(&pos),
        "--pred-network",
        path_str(&net),
        "--pred-positions",
        path_str(&pos),
        "--ref-importance",
        path_str(&imp),
        "--pred-importance",
        path_str(&imp),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let overall = text.lines().find(|l| l.starts_with("overall")).unwrap();
    assert_eq!(overall.split_whitespace().nth(1), Some("1.0"), "{text}");
}

#[test]
fn score_batch_missing_metric_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("values.csv");
    fs::write(
        &values,
        "metric,value\nGraph_Connectivity,0.9\nPCR_Comparison,0.5\niLISI_Graph,0.4\nASW_batch,0.8\n\
         Isolated_Labels,0.6\nARI,0.7\nNMI,0.7\nASW_cell,0.6\ncLISI_Graph,0.95\n",
    )
    .unwrap();
    let out = cellpilot(&["score", "batch", "--values", path_str(&values)]);
    assert_eq!(code(&out), 65);
    assert!(stderr(&out).contains("kBET"), "{}", stderr(&out));
}

#[test]
fn score_batch_missing_raw_input_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.csv");
    fs::write(&emb, "cell_id,d1,d2\na,0,1\nb,1,0\nc,1,1\n").unwrap();
    let out = cellpilot(&["score", "batch", "--embedding", path_str(&emb)]);
    assert_eq!(code(&out), 65);
    assert!(stderr(&out).contains("embedding_before"), "{}", stderr(&out));
}

#[test]
fn score_batch_from_values() {
    let dir = tempfile::tempdir().unwrap();
    let values = dir.path().join("values.csv");
    let mut text = String::from("metric,value\n");
    for m in ["Graph_Connectivity", "PCR_Comparison", "iLISI_Graph", "kBET", "ASW_batch"] {
        text.push_str(&format!("{m},0.5\n"));
    }
    for m in ["Isolated_Labels", "ARI", "NMI", "ASW_cell", "cLISI_Graph"] {
        text.push_str(&format!("{m},1\n"));
    }
    fs::write(&values, text).unwrap();
    let out = cellpilot(&["score", "batch", "--values", path_str(&values)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let overall = stdout(&out).lines().find(|l| l.starts_with("overall")).unwrap().to_string();
    assert_eq!(overall.split_whitespace().nth(1), Some("0.8"));
}

#[test]
fn worker_speaks_protocol() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_cellpilot"))
        .args(["worker", "--artifacts", path_str(dir.path())])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        writeln!(stdin, r#"{{"type":"execute","cell_id":"1","code":"print(6 * 7)"}}"#).unwrap();
        writeln!(stdin, r#"{{"type":"shutdown"}}"#).unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("42"), "{text}");
}
