//! End-to-end tests of the `gwa` binary: documented examples, schema
//! conformance, determinism and error reporting.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gwa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwa"))
        .args(args)
        .output()
        .expect("gwa runs")
}

fn stdout(out: &Output) -> &str {
    std::str::from_utf8(&out.stdout).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> &str {
    std::str::from_utf8(&out.stderr).expect("utf-8 stderr")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "gwa failed: {}", stderr(out));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn assert_schema(name: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(
        errors.is_empty(),
        "{name} output violates its schema: {errors:#?}"
    );
}

#[test]
fn group_example_yields_two_groups() {
    let doc = json(&gwa(&[
        "group",
        "--sizes",
        "7,3,5,6,3",
        "--channels",
        "8",
        "--gs",
        "12",
    ]));
    assert_schema("group", &doc);
    assert_eq!(
        doc["plan"]["groups"],
        serde_json::json!([[0, 2], [1, 3, 4]])
    );
    assert_eq!(doc["plan"]["fill"], serde_json::json!([12, 12]));
    assert_eq!(doc["report"]["optimum"]["num_groups"], 2);
}

#[test]
fn verify_example_passes() {
    let out = gwa(&["verify", "--stage", "1", "--ratio", "0.75", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_schema("verify", &doc);
    assert!(doc["max_relative_error"].as_f64().unwrap() <= 1e-9);
    assert_eq!(doc["pass"], true);
}

#[test]
fn verify_rejects_invalid_tolerance() {
    for tol in ["-1", "NaN"] {
        let out = gwa(&["verify", "--tolerance", tol]);
        assert_eq!(out.status.code(), Some(2), "tolerance {tol}");
        assert!(stderr(&out).contains(tol));
    }
}

#[test]
fn simulate_stage_four_notes_single_window() {
    let doc = json(&gwa(&["simulate", "--stage", "4", "--trials", "5"]));
    assert_schema("simulate", &doc);
    let stage = &doc["stages"][0];
    assert_eq!(stage["single_window"], true);
    assert!(stage["note"].as_str().unwrap().contains("single window"));
}

#[test]
fn every_document_matches_its_schema() {
    for (name, args) in [
        ("mask", vec!["mask", "--unit-span", "2"]),
        ("windows", vec!["windows", "--shift", "3,3", "--seed", "9"]),
        ("group", vec!["group", "--ratio", "0.5"]),
        ("group", vec!["group", "--candidates", "49,60,70"]),
        ("verify", vec!["verify", "--stage", "3", "--shift", "3,3"]),
        ("simulate", vec!["simulate", "--trials", "4"]),
        ("help", vec!["--help-json"]),
    ] {
        assert_schema(name, &json(&gwa(&args)));
    }
}

#[test]
fn defaults_are_echoed() {
    let doc = json(&gwa(&["mask"]));
    let params = &doc["meta"]["params"];
    assert_eq!(params["seed"], 0);
    assert_eq!(params["ratio"], 0.75);
    assert_eq!(params["units_h"], 7);
    assert_eq!(doc["meta"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["mask"]["hidden"], 36);
}

#[test]
fn identical_config_gives_identical_bytes() {
    for args in [
        vec!["mask", "--seed", "3"],
        vec!["windows", "--shift", "2,5"],
        vec!["group"],
        vec!["verify", "--stage", "2"],
        vec!["simulate", "--trials", "6"],
    ] {
        assert_eq!(gwa(&args).stdout, gwa(&args).stdout, "{args:?}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = gwa(&[
            "simulate",
            "--trials",
            "12",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut doc: Value = serde_json::from_slice(&o.stdout).unwrap();
        // only the echoed parameters and file names may differ
        doc["meta"] = Value::Null;
        for s in doc["stages"].as_array_mut().unwrap() {
            s["csv"] = Value::Null;
        }
        doc
    };
    assert_eq!(run("1", "a.csv"), run("4", "b.csv"));
    for s in 1..=4 {
        let a = std::fs::read(dir.path().join(format!("a_stage{s}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_stage{s}.csv"))).unwrap();
        assert_eq!(a, b, "stage {s}");
    }
}

#[test]
fn simulate_csv_has_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let summary = dir.path().join("summary.json");
    let o = gwa(&[
        "simulate",
        "--stage",
        "2",
        "--trials",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--json",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("g_s,mean_flops,std_flops,trials_valid")
    );
    assert!(csv.lines().count() > 1);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_schema("simulate", &doc);
}

#[test]
fn group_csv_lists_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = gwa(&[
        "group",
        "--sizes",
        "7,3,5,6,3",
        "--channels",
        "8",
        "--csv",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("g_s,n_g,flops"));
    // g_s sweeps 7..=24
    assert_eq!(lines.count(), 18);
}

#[test]
fn ascii_mask_matches_json_mask() {
    let doc = json(&gwa(&["mask", "--seed", "5", "--unit-span", "2"]));
    let art = gwa(&[
        "mask",
        "--seed",
        "5",
        "--unit-span",
        "2",
        "--format",
        "ascii",
    ]);
    let from_art: Vec<bool> = stdout(&art)
        .lines()
        .flat_map(|l| l.chars().map(|c| c == '#'))
        .collect();
    let from_json: Vec<bool> = doc["tokens"]["visible"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_bool().unwrap())
        .collect();
    assert_eq!(from_art, from_json);
}

#[test]
fn malformed_values_name_the_offending_token() {
    let out = gwa(&["group", "--sizes", "7,oops,3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("oops"));

    let out = gwa(&["mask", "--ratio", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("1.5"));

    let out = gwa(&["windows", "--shift", "3;3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("3;3"));

    let out = gwa(&["simulate", "--stage", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains('5'));

    let out = gwa(&["mask", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_geometry_is_rejected() {
    let out = gwa(&["windows", "--shift", "7,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("shift"));

    let out = gwa(&["windows", "--tokens-h", "50"]);
    assert_eq!(out.status.code(), Some(2));

    let out = gwa(&["group", "--sizes", "9,4", "--gs", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failures_report_the_path() {
    let out = gwa(&[
        "simulate",
        "--stage",
        "4",
        "--trials",
        "2",
        "--out",
        "/nonexistent-dir/curve.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent-dir/curve.csv"));
}

#[test]
fn version_and_json_help() {
    let out = gwa(&["--version"]);
    assert!(out.status.success());
    assert_eq!(
        stdout(&out).trim(),
        format!("gwa {}", env!("CARGO_PKG_VERSION"))
    );

    let doc = json(&gwa(&["--help-json"]));
    let names: Vec<&str> = doc["subcommands"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["mask", "windows", "group", "verify", "simulate"]);
    let simulate = &doc["subcommands"][4]["flags"];
    assert!(simulate
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["long"] == "--threads" && f["default"] == "1"));
}
