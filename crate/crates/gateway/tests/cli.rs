use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn tapeloop(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapeloop"))
        .current_dir(repo_root())
        .env("TAPELOOP_DATA_DIR", data_dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn local_run_then_replay_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut run_ids = Vec::new();
    for design in ["crc", "timer"] {
        let out = tapeloop(
            dir.path(),
            &[
                "run",
                "--local",
                "--config",
                &format!("configs/{design}.json"),
                "--spec",
                &format!("specs/{design}.spec"),
                "--scenario",
                &format!("scenarios/{design}.json"),
            ],
        );
        let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(report["phase"], "signed-off");
        run_ids.push(report["run_id"].as_str().unwrap().to_string());
    }

    let replay = stdout(&tapeloop(dir.path(), &["replay", &run_ids[0]]));
    assert!(replay.contains("phase signed-off"), "{replay}");

    let report = stdout(&tapeloop(dir.path(), &["report", &run_ids[1]]));
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["design_id"], "timer");
    assert!(report["signoff"].is_object());

    let mut args = vec!["metrics", "table", "--zero-shot", "data/zero_shot.json"];
    args.extend(run_ids.iter().map(String::as_str));
    let table = stdout(&tapeloop(dir.path(), &args));
    assert!(table.lines().next().unwrap().starts_with("design"));
    assert!(table.contains("crc:") && table.contains("timer:"), "{table}");
    assert!(table.contains("mean delta"));
}

#[test]
fn scenario_validate_accepts_shipped_and_rejects_broken() {
    let dir = tempfile::tempdir().unwrap();
    let ok = stdout(&tapeloop(
        dir.path(),
        &["scenario", "validate", "scenarios/lemming.json"],
    ));
    assert!(ok.contains("ok (lemming"));

    let mut broken: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo_root().join("scenarios/lemming.json")).unwrap()).unwrap();
    broken["hitl"] = serde_json::json!([]);
    let path = repo_root()
        .join("scenarios")
        .join(format!(".broken-{}.json", std::process::id()));
    std::fs::write(&path, broken.to_string()).unwrap();
    let out = tapeloop(dir.path(), &["scenario", "validate", path.to_str().unwrap()]);
    std::fs::remove_file(&path).unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenario incomplete") && err.contains("hitl:"), "{err}");
}

#[test]
fn replay_of_missing_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = tapeloop(dir.path(), &["replay", "nope"]);
    assert!(!out.status.success());
}
