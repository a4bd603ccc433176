use std::path::Path;
use std::process::Command;

fn track(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_track")).args(args).output().expect("spawn track")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn synth_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data").join("static");
    let out = track(&["synth", "--case", "static", "--frames", "6", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(data.join("img")).unwrap().count(), 6);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"update_rate": 0.01, "estimate_scale": false}"#).unwrap();
    let attrs = dir.path().join("attrs.json");
    std::fs::write(&attrs, r#"{"static": ["IV", "BC"]}"#).unwrap();
    let runs = dir.path().join("runs");
    let out = track(&[
        "run", "--dataset", s(&dir.path().join("data")), "--tracker", "srdcf", "--config", s(&cfg), "--attributes",
        s(&attrs), "--out", s(&runs),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seq_dir = runs.join("srdcf").join("static");
    for f in ["run.json", "report.json", "precision.csv", "success.csv", "timing.json"] {
        assert!(seq_dir.join(f).is_file(), "missing {f}");
    }
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs.join("srdcf").join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["schema_version"], 1);
    assert!(agg["by_attribute"]["BC"].is_object());
    // A static scene is tracked exactly.
    assert_eq!(agg["overall"]["auc"], 20.0 / 21.0);

    let evaluated = dir.path().join("eval");
    let out = track(&["eval", "--runs", s(&runs), "--out", s(&evaluated)]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(seq_dir.join("report.json")).unwrap(),
        std::fs::read(evaluated.join("srdcf").join("static").join("report.json")).unwrap()
    );
}

#[test]
fn verify_custom_cases_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases.json");
    std::fs::write(&cases, r#"[{"kind": "cflbmc_srdcf", "seed": 1}, {"kind": "alm_oracle", "seed": 2}]"#).unwrap();
    let report = dir.path().join("report.json");
    let out = track(&["verify", "--cases", s(&cases), "--report", s(&report)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("cflbmc_srdcf") && stdout.contains("PASS"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
    assert_eq!(json["cases"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = track(&["run", "--dataset", s(dir.path()), "--tracker", "kcf", "--out", s(dir.path())]);
    assert!(!out.status.success());
    let missing = dir.path().join("nope.json");
    let out = track(&["verify", "--cases", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}
