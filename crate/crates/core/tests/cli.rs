use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn delib(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delib"))
        .arg("--mock-gateway")
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .env_remove("DELIB_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = delib(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn usage_errors_exit_2_with_a_json_body() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["cluster", "d", "--k", "9"][..], &["report", "d", "--style", "poetic"], &["no-such-command"]] {
        let out = delib(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let body = stderr_json(&out);
        assert_eq!(body["error"], "bad_request", "{args:?}");
        assert_eq!(body["invariant"], "cli.usage");
    }
    assert_eq!(delib(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn command_errors_exit_1_and_leave_the_store_alone() {
    let dir = tempfile::tempdir().unwrap();
    let out = delib(dir.path(), &["approve", "no-such-session"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "not_found");

    let deck = format!("{FIXTURES}/panel/deck.json");
    let out = delib(dir.path(), &["create-event", "ai-panel", "--deck", &deck, "--title", "T", "--transcript", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(ok(dir.path(), &["verify-store"])["seq"], 0, "a failed command logged records");
    // the deck names its event
    let out = delib(dir.path(), &["create-event", "other", "--deck", &deck, "--title", "T"]);
    assert_eq!(stderr_json(&out)["invariant"], "deck.cards");
}

#[test]
fn simulated_panel_raises_one_alert_and_drafts_its_question() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let created = ok(
        d,
        &[
            "create-event",
            "ai-panel",
            "--deck",
            &format!("{FIXTURES}/panel/deck.json"),
            "--title",
            "AI regulation panel",
            "--transcript",
            &format!("{FIXTURES}/panel/transcript.json"),
        ],
    );
    assert!(created["transcript_id"].is_string());
    let summary = ok(d, &["simulate-event", "ai-panel", "--replay", &format!("{FIXTURES}/panel/replay.ndjson"), "--speed", "1000"]);
    assert_eq!(summary["events"], 161);
    assert_eq!(summary["accepted"], 161);
    assert_eq!(summary["alerts"], 1);
    assert_eq!(summary["prompts"], 1);
    let verify = ok(d, &["verify-store"]);
    assert_eq!(verify["violations"], serde_json::json!([]));
}
