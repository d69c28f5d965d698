//! Exit codes, error-line format and config-file behaviour of the binary.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpbf-tf"))
}

#[test]
fn missing_required_flag_exits_2_with_parsable_error() {
    let out = bin().args(["simulate", "--side-mm", "0.2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.lines().any(|l| l.starts_with("error: validation: ")),
        "stderr was: {stderr}"
    );
}

#[test]
fn unknown_preset_is_a_validation_failure() {
    let out = bin()
        .args(["simulate", "--preset", "dataset9", "--out", "/tmp/nope"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn invalid_numeric_input_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("ds");
    let out = bin()
        .args([
            "simulate",
            "--side-mm",
            "0.2",
            "--layers",
            "1",
            "--absorptivity",
            "1.5",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists(), "no output may be written on rejection");
}

#[test]
fn explicit_scheme_stability_violation_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "simulate",
            "--side-mm",
            "0.2",
            "--layers",
            "1",
            "--dwell-s",
            "1",
            "--scheme",
            "explicit",
            "--fd-dt",
            "0.05",
            "--out",
            tmp.path().join("ds").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error: numerical:"), "stderr: {stderr}");
    assert!(stderr.contains("stability limit"), "stderr: {stderr}");
}

#[test]
fn config_file_replaces_flags_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"side_mm": 0.2, "layers": 3, "dwell_s": 5.0, "out": "{}"}}"#,
            ds.display()
        ),
    )
    .unwrap();
    // --layers overrides the config's 3.
    let out = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--layers", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_layers"], 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"side_mmm": 0.2}"#).unwrap();
    let out = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("side_mmm"));
}

#[test]
fn presets_map_to_their_geometries() {
    let tmp = tempfile::tempdir().unwrap();
    for (preset, side_m) in [("dataset1", 2.0e-4), ("dataset3", 4.0e-4)] {
        let ds = tmp.path().join(preset);
        let out = bin()
            .args([
                "simulate",
                "--preset",
                preset,
                "--layers",
                "1",
                "--dwell-s",
                "2",
                "--out",
                ds.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["name"], preset);
        let got = manifest["geometry"]["part_side"].as_f64().unwrap();
        assert!((got - side_m).abs() < 1e-12);
        assert_eq!(
            manifest["geometry"]["part_element_size"].as_f64().unwrap(),
            0.04e-3
        );
    }
}

#[test]
fn forecast_requires_ingestable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "forecast",
            "--dataset",
            tmp.path().join("missing").to_str().unwrap(),
            "--params",
            tmp.path().join("nope.json").to_str().unwrap(),
            "--out",
            tmp.path().join("fc").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
