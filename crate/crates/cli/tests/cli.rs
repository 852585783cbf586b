use std::path::Path;
use std::process::Command;

use narrator::datasets::load_manifest;
use narrator_cli::run;
use serde_json::Value;

fn cli(args: &[&str]) -> Result<narrator_cli::Summary, narrator_cli::CliFailure> {
    let mut full = vec!["narrator"];
    full.extend_from_slice(args);
    run(full)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn oracle_pipeline_scores_full_marks_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    let args = ["pipeline", "--manifest", m, "--count", "20", "--keyframe-strategy", "ground_truth", "--backend", "oracle"];
    let first = cli(&args).unwrap();
    assert_eq!(first.report.as_ref().unwrap().average, 100.0);
    assert_eq!(first.computed["caption"], 20);

    let again = cli(&args).unwrap();
    for stage in ["detect", "keyframes", "caption"] {
        assert_eq!(again.computed[stage], 0, "{stage} recomputed");
    }
    assert_eq!(again.config_hash, first.config_hash);

    let forced = cli(&[&args[..], &["--force"]].concat()).unwrap();
    assert_eq!(forced.computed["detect"], 20);

    assert!(dir.path().join("report.txt").exists());
    let results = json(&dir.path().join("results.json"));
    assert!(results.to_string().contains("100"));
    let runs = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 3);
}

#[test]
fn start_end_keyframes_span_the_clip() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    cli(&["generate", "--manifest", m, "--count", "5"]).unwrap();
    cli(&["keyframes", "--manifest", m, "--keyframe-strategy", "start_end"]).unwrap();
    for r in load_manifest(Path::new(m)).unwrap() {
        let k = json(&dir.path().join(r.keyframes.unwrap()));
        assert_eq!((k["s"].as_u64(), k["e"].as_u64()), (Some(0), Some(9)), "{}", r.id);
        assert_eq!(k["strategy"], "start_end");
    }
}

#[test]
fn stage_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    cli(&["pipeline", "--manifest", m, "--count", "5", "--seed", "4"]).unwrap();
    let read = |name: &str| -> Vec<(String, Value)> {
        load_manifest(Path::new(m))
            .unwrap()
            .iter()
            .map(|r| {
                let mut v = json(&dir.path().join(format!("artifacts/{}/{name}", r.id)));
                if let Some(o) = v.as_object_mut() {
                    o.remove("latency_ms");
                }
                (std::fs::read_to_string(dir.path().join(format!("artifacts/{}/{name}", r.id))).unwrap(), v)
            })
            .collect()
    };
    let keyframes = read("keyframes.json");
    let fixes = read("cursor_fixes.json");
    let predictions = read("prediction.json");
    cli(&["detect-cursor", "--manifest", m, "--seed", "4"]).unwrap();
    cli(&["keyframes", "--manifest", m, "--seed", "4"]).unwrap();
    cli(&["caption", "--manifest", m, "--seed", "4"]).unwrap();
    let texts = |v: &[(String, Value)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&read("cursor_fixes.json")), texts(&fixes));
    assert_eq!(texts(&read("keyframes.json")), texts(&keyframes));
    let values = |v: &[(String, Value)]| v.iter().map(|x| x.1.clone()).collect::<Vec<_>>();
    assert_eq!(values(&read("prediction.json")), values(&predictions));
}

#[test]
fn evaluate_without_predictions_fails() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    cli(&["generate", "--manifest", m, "--count", "3"]).unwrap();
    let err = cli(&["evaluate", "--manifest", m]).unwrap_err();
    assert_eq!(err.stage, "evaluate");
    assert!(err.message.contains("prediction"), "{}", err.message);
}

#[test]
fn generate_keeps_an_existing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    cli(&["generate", "--manifest", m, "--count", "2"]).unwrap();
    assert!(cli(&["generate", "--manifest", m, "--count", "2"]).is_err());
    cli(&["generate", "--manifest", m, "--count", "3", "--force"]).unwrap();
    assert_eq!(load_manifest(Path::new(m)).unwrap().len(), 3);
}

#[test]
fn stats_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let m = m.to_str().unwrap();
    cli(&["generate", "--manifest", m, "--count", "5"]).unwrap();
    let s = cli(&["stats", "--manifest", m]).unwrap();
    assert!(s.text.contains('5'), "{}", s.text);
    assert!(dir.path().join("stats.json").exists());
}

#[test]
fn binary_prints_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_narrator"))
        .args(["evaluate", "--manifest", missing.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(line["error"]["stage"].is_string());

    let out = Command::new(env!("CARGO_BIN_EXE_narrator"))
        .args(["caption", "--manifest", "x", "--s-box", "300"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"]["stage"], "args");
}
