use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use vpd_core::fixtures;
use vpd_core::geo::interpolate;

fn vpd(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpd"))
        .arg("--state")
        .arg(state)
        .args(args)
        .env_remove("VPD_DATA")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture_dir(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

/// Logs Parker in halfway along truck t1 at `time`; returns the session id.
fn login_parker(state: &Path, time: &str) -> String {
    let d = fixtures::logistics().unwrap();
    let t1 = d.carrier("t1").unwrap();
    let mid = interpolate(t1.waypoints[0], *t1.waypoints.last().unwrap(), 0.5);
    let (lat, lon) = (mid.lat.to_string(), mid.lon.to_string());
    let o = vpd(
        state,
        &[
            "login", "Parker", "--lat", &lat, "--lon", &lon, "--time", time,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).trim().to_string()
}

#[test]
fn parker_on_route_is_granted_four_rows() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let s = login_parker(&state, "2010-08-20T12:00:00Z");
    assert_eq!(s, "s0001");
    let o = vpd(&state, &["query", &s, "select oid from object"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("verdict: GRANTED (in-range)\n"), "{out}");
    assert!(out.contains("CREATE VPD vpd(Parker, l, t) AS"));
    assert!(out.ends_with("4 rows\n"), "{out}");
    for oid in ["o001", "o002", "o003", "o004"] {
        assert!(out.contains(oid));
    }
}

#[test]
fn parker_past_arrival_is_revoked() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let s = login_parker(&state, "2010-09-20T12:00:00Z");
    let o = vpd(
        &state,
        &["--format", "json", "query", &s, "select * from object"],
    );
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"], "REVOKED");
    assert_eq!(v["reason"], "out-of-time");
    assert_eq!(v["rows"].as_array().unwrap().len(), 0);
}

#[test]
fn json_rows_round_trip() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let s = login_parker(&state, "2010-08-20T12:00:00Z");
    let o = vpd(
        &state,
        &[
            "--format",
            "json",
            "query",
            &s,
            "select oid, truck from object",
        ],
    );
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(
        v["schema"],
        serde_json::json!(["object.oid", "object.truck"])
    );
    let rows: Vec<Vec<Option<String>>> = serde_json::from_value(v["rows"].clone()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1].as_deref() == Some("t1")));
}

#[test]
fn syntax_error_reports_position() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let o = vpd(&state, &["query", "Chris", "select * from object where"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.starts_with("error[E_SYNTAX]: syntax error at offset 26"),
        "{err}"
    );
    assert!(err.lines().last().unwrap().trim_start() == "^");

    let o = vpd(
        &state,
        &[
            "--format",
            "json",
            "query",
            "Chris",
            "select * from object where",
        ],
    );
    let v: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"]["code"], "E_SYNTAX");
    assert_eq!(v["error"]["position"], 26);
}

#[test]
fn unknown_session_and_subject() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let o = vpd(&state, &["query", "s0042", "select * from object"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[E_UNKNOWN_SESSION]"));
    let o = vpd(&state, &["login", "Nobody"]);
    assert!(stderr(&o).starts_with("error[E_UNKNOWN_SUBJECT]"));
    let o = vpd(&state, &["logout", "s0001"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sessions_persist_and_close() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let a = login_parker(&state, "2010-08-20T12:00:00Z");
    let o = vpd(&state, &["login", "Chris"]);
    let b = stdout(&o).trim().to_string();
    assert_eq!((a.as_str(), b.as_str()), ("s0001", "s0002"));
    let listed = stdout(&vpd(&state, &["sessions"]));
    assert!(listed.contains("s0001") && listed.contains("s0002"));
    assert!(vpd(&state, &["logout", &a]).status.success());
    let listed = stdout(&vpd(&state, &["sessions"]));
    assert!(!listed.contains("s0001") && listed.contains("s0002"));
}

#[test]
fn supervisor_sees_moving_subordinate() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    login_parker(&state, "2010-08-20T12:00:00Z");
    let o = vpd(&state, &["vpd", "Chris"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(
        out.contains("subordinate Parker: included (in-range)"),
        "{out}"
    );
    assert!(out.contains("objects: o001, o002, o003, o004, o005"));

    let o = vpd(&state, &["--mode", "strict", "vpd", "Chris"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn oracle_agrees_with_query() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let o = vpd(&state, &["--format", "json", "oracle", "Charles"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let oracle: Vec<String> = serde_json::from_value(v["objects"].clone()).unwrap();
    let o = vpd(
        &state,
        &[
            "--format",
            "json",
            "query",
            "Charles",
            "select oid from object",
        ],
    );
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let mut rows: Vec<String> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r[0].as_str().unwrap().to_string())
        .collect();
    rows.sort();
    assert_eq!(rows, oracle);
}

#[test]
fn simulate_matches_frozen_log() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let out = dir.path().join("events.jsonl");
    let scenario = fixture_dir("handover").join("scenario.json");
    let o = vpd(
        &state,
        &[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        fixtures::HANDOVER_GOLDEN_EVENTS
    );

    let o = vpd(
        &state,
        &["simulate", "--scenario", scenario.to_str().unwrap()],
    );
    assert_eq!(stdout(&o), fixtures::HANDOVER_GOLDEN_EVENTS);
}

#[test]
fn simulate_failure_keeps_partial_log() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let scenario = dir.path().join("bad.json");
    std::fs::write(
        &scenario,
        r#"{"name": "bad", "steps": [
            {"at": "2010-08-01T00:00:00Z", "action": "login", "subject": "Chris"},
            {"at": "2010-08-02T00:00:00Z", "action": "login", "subject": "Nobody"}
        ]}"#,
    )
    .unwrap();
    let out = dir.path().join("events.jsonl");
    let o = vpd(
        &state,
        &[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[E_SCENARIO]"), "{}", stderr(&o));
    assert!(!std::fs::read_to_string(&out).unwrap().is_empty());
}

#[test]
fn validate_reports_violations() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    assert!(vpd(&state, &["validate"]).status.success());

    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    for entry in std::fs::read_dir(fixture_dir("logistics")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv" || e == "json") {
            std::fs::copy(&p, data.join(p.file_name().unwrap())).unwrap();
        }
    }
    std::fs::remove_file(data.join("logistics.json")).unwrap();
    let subjects = std::fs::read_to_string(data.join("subject.csv")).unwrap();
    let dup = subjects.lines().nth(1).unwrap().to_string();
    std::fs::write(data.join("subject.csv"), format!("{subjects}{dup}\n")).unwrap();

    let o = vpd(&state, &["--data", data.to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stdout(&o).contains("dataset: 2 violations"),
        "{}",
        stdout(&o)
    );

    let o = vpd(&state, &["--corridor-km", "0", "validate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corridor_override_changes_verdict() {
    let dir = TempDir::new().unwrap();
    let state = dir.path().join("state.json");
    let o = vpd(
        &state,
        &[
            "login",
            "Parker",
            "--lat",
            "39.5",
            "--lon",
            "-90",
            "--time",
            "2010-08-20",
        ],
    );
    let s = stdout(&o).trim().to_string();
    let o = vpd(&state, &["query", &s, "select oid from object"]);
    assert_eq!(o.status.code(), Some(2));
    let o = vpd(
        &state,
        &[
            "--corridor-km",
            "2000",
            "query",
            &s,
            "select oid from object",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}
