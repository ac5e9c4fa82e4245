use std::path::Path;
use std::process::{Command, Output};

fn wbdwi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbdwi")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_phantom(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let spec = dir.join(format!("{name}.json"));
    let body = format!(
        r#"{{"dims": [40, 32, 48], "spacing": [6.0, 6.0, 8.0], "noise_sigma": 0.0,
            "lesions": [{{"center_mm": [120.0, 110.0, 192.0], "radii_mm": [20.0, 20.0, 20.0]}}]{extra}}}"#
    );
    std::fs::write(&spec, body).unwrap();
    let out = dir.join(name);
    let o = wbdwi(&["phantom", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn pipeline_on_identical_pair_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let study = small_phantom(dir.path(), "a", "");
    let out = dir.path().join("out");
    let o = wbdwi(&["pipeline", p(&study), p(&study), "--out", p(&out), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("Stable"));
    for f in ["report.json", "report.md", "timings.json", "lesions_pre.nii", "b900_normalized_post.nii"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let r = wbdwi(&["report-render", p(&out.join("report.json"))]);
    assert!(r.status.success());
    assert_eq!(stdout(&r), std::fs::read_to_string(out.join("report.md")).unwrap());
}

#[test]
fn stage_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let study = small_phantom(dir.path(), "a", "");
    let out = dir.path().join("stages");
    for (cmd, file) in [
        ("fit-adc", "adc.nii"),
        ("normalize", "b900_normalized.nii"),
        ("segment", "lesion_mask.nii"),
        ("postprocess", "lesions.nii"),
        ("quantify", "biomarkers.json"),
        ("single", "report.json"),
    ] {
        let o = wbdwi(&[cmd, p(&study), "--out", p(&out)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{cmd} did not write {file}");
    }
    let o = wbdwi(&["quantify", p(&study), "--mask", p(&out.join("lesion_mask.nii"))]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["regions"][0]["region"], "whole_skeleton");
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(wbdwi(&["single", p(&empty), "--config", p(&bad)]).status.code(), Some(2));
    assert_eq!(wbdwi(&["single", p(&empty)]).status.code(), Some(2));
    assert_eq!(wbdwi(&["fit-adc", p(&empty), "--out", p(&dir.path().join("o"))]).status.code(), Some(2));
    assert_eq!(wbdwi(&["single", p(&empty), "--backend", "cnn"]).status.code(), Some(2));
    assert_eq!(wbdwi(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_canal_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let pre = small_phantom(dir.path(), "pre", "");
    let post = small_phantom(dir.path(), "post", r#", "omit_canal": true"#);
    let out = dir.path().join("out");
    let o = wbdwi(&["pipeline", p(&pre), p(&post), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[normalize]"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(v["pre"]["biomarkers"].is_object());
    assert_eq!(v["post"]["error"]["stage"], "normalize");
}

#[test]
fn respond_from_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "id,delta_tdv_pct,delta_median_gadc_pct\nA,-50,0\nB,60,0\nC,,10\n").unwrap();
    let o = wbdwi(&["respond", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let outcomes: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["response"]["outcome"].as_str().unwrap()).collect();
    assert_eq!(outcomes, ["Responder", "Progression", "Review"]);

    let json = dir.path().join("d.json");
    std::fs::write(&json, r#"[{"id": "X", "tdv_pre": 100, "tdv_post": 100, "median_gadc_pre": 1.0, "median_gadc_post": 1.3}]"#).unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&wbdwi(&["respond", p(&json)]))).unwrap();
    assert_eq!(v[0]["response"]["outcome"], "Responder");
}

#[test]
fn statistics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("rep.csv");
    std::fs::write(&rep, "subject,first,second\na,10,12\nb,20,22\nc,30,32\n").unwrap();
    let o = wbdwi(&["repeatability", p(&rep), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rc = v["repeatability"]["rc"]["value"]["value"].as_f64().unwrap();
    assert!((rc - 3.92).abs() < 1e-4, "{v}");

    let o = wbdwi(&["accuracy", "--counts", "50,59,32,43"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["accuracy"]["value"]["value"].as_f64().unwrap() - 82.0 / 102.0).abs() < 1e-5);

    let acc = dir.path().join("acc.csv");
    std::fs::write(&acc, "predicted,reference\nresponder,benefit\nprogression,no_benefit\nstable,no_benefit\n").unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&wbdwi(&["accuracy", p(&acc)]))).unwrap();
    assert_eq!(v["accuracy"]["numerator"], 2);

    let cut = dir.path().join("cut.csv");
    let mut text = String::from("delta_tdv_pct,delta_median_gadc_pct,reference\n");
    for k in 0..4 {
        let j = k as f64;
        text += &format!("{},0,responder\n{},{},responder\n{},{},stable\n{},0,progression\n{},0,stable\n", -40.0 - j, j, 25.0 + j, -39.8 + j, 24.8 - j, 40.3 + j, 40.0 - j);
    }
    std::fs::write(&cut, text).unwrap();
    let o = wbdwi(&["optimize-cutoffs", p(&cut), "--iterations", "20", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["responder"]["tdv_decrease"]["value"], -40.0);
}

#[test]
fn cohort_spec_writes_index() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("cohort.json");
    std::fs::write(
        &spec,
        r#"{"plan": {"responders": 1, "progressors": 1}, "template": {"dims": [40, 32, 48], "spacing": [6.0, 6.0, 8.0]}, "lesion_radius_mm": [18.0, 20.0]}"#,
    )
    .unwrap();
    let out = dir.path().join("cohort");
    let o = wbdwi(&["phantom", p(&spec), "--out", p(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("cohort.json").exists());
    assert!(out.join("patient_001/post/sidecar.json").exists());
}
