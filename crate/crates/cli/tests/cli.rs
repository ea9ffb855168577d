use std::fs;
use std::process::{Command, Output};

fn granular(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_granular")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn invalid_config_lists_every_error_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"schema_version": 1, "mode": "simulate", "physics": {"restitution": 1.5, "colour": 3}, "numerics": {"particles": 0}}"#,
    )
    .unwrap();
    let o = granular(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["restitution", "colour", "particles"] {
        assert!(err.contains(needle), "{needle} not reported in {err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn mode_mismatch_is_an_error() {
    let o = granular(&["simulate", "--preset", "operator-check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("qcheck"));
}

#[test]
fn report_on_missing_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let o = granular(&["report", "--input", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config.json"), "{}", stderr(&o));
}

#[test]
fn planar_operator_check_passes_and_report_rebuilds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q");
    let cfg = dir.path().join("q.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"schema_version": 1, "mode": "qcheck", "physics": {{"dimension": 2}}, "operator": {{"probes": 4}}, "output": {{"directory": {:?}}}}}"#,
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = granular(&["qcheck", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("carleman_vs_direct"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let again = dir.path().join("again");
    let o = granular(&["report", "--input", out.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rebuilt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(again.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"], rebuilt["checks"]);
}

#[test]
fn presets_are_listed() {
    let o = granular(&["presets"]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    for name in ["haff-law", "self-similar", "operator-check", "stability"] {
        assert!(s.contains(name), "{s}");
    }
}
