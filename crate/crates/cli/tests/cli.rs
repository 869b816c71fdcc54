use std::path::Path;
use std::process::{Command, Output};

fn spanwise(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanwise"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_then_all_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(spanwise(&["synth", "--n", "4", "--out", "syn"], d));
    let printed = ok(spanwise(&["all", "--config", "syn/config.json"], d));
    for name in [
        "instances.jsonl",
        "explanations.jsonl",
        "report.json",
        "summary.md",
        "faithfulness.svg",
    ] {
        assert!(printed.contains(name), "{name} not listed in {printed}");
        assert!(d.join("syn/out").join(name).metadata().unwrap().len() > 0);
    }
    let rows = std::fs::read(d.join("syn/out/rows.jsonl")).unwrap();

    ok(spanwise(
        &["report", "--out-dir", "syn/again", "--report", "syn/out/report.json"],
        d,
    ));
    assert_eq!(std::fs::read(d.join("syn/again/rows.jsonl")).unwrap(), rows);

    // Flags override the config; a fresh evaluation with the same seeds matches.
    ok(spanwise(
        &[
            "evaluate",
            "--config",
            "syn/config.json",
            "--out-dir",
            "syn/eval",
            "--workers",
            "2",
        ],
        d,
    ));
    ok(spanwise(&["report", "--out-dir", "syn/eval"], d));
    assert_eq!(std::fs::read(d.join("syn/eval/rows.jsonl")).unwrap(), rows);
}

#[test]
fn stages_write_artifacts_and_flags_select_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(spanwise(&["synth", "--n", "3", "--out", "syn"], d));
    let base = [
        "--config",
        "syn/config.json",
        "--out-dir",
        "st",
        "--methods",
        "baseline,span",
    ];
    for (cmd, artifact) in [
        ("ingest", "instances.jsonl"),
        ("score", "scores.jsonl"),
        ("extract", "interactions.jsonl"),
    ] {
        let mut args = vec![cmd];
        args.extend(base);
        assert!(ok(spanwise(&args, d)).trim().ends_with(artifact));
        assert_eq!(
            std::fs::read_to_string(d.join("st").join(artifact))
                .unwrap()
                .lines()
                .count(),
            3
        );
    }
    let mut args = vec!["explain"];
    args.extend(base);
    ok(spanwise(&args, d));
    let text = std::fs::read_to_string(d.join("st/explanations.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(!text.contains("span+steering"));
}

#[test]
fn unreachable_labeler_keeps_the_run_going() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(spanwise(&["synth", "--n", "2", "--out", "syn"], d));
    let args = [
        "label",
        "--config",
        "syn/config.json",
        "--labeler-url",
        "http://127.0.0.1:9/v1/chat/completions",
        "--labeler-model",
        "m",
    ];
    ok(spanwise(&args, d));
    let text = std::fs::read_to_string(d.join("syn/out/labeled.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"flagged\":true"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = spanwise(&["evaluate", "--dataset", "missing.jsonl"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--fixture"));

    ok(spanwise(&["synth", "--n", "2", "--out", "syn"], dir.path()));
    let out = spanwise(&["evaluate", "--config", "syn/config.json", "--beta", "2"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
}
