use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flekd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flekd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let out = dir.join("out");
    fs::write(
        &path,
        format!(
            r#"{{
  "data": {{"synthetic": {{"n_per_class": 150}}}},
  "proxy_size": 210,
  "hidden_dim": 16,
  "rounds": {{"total_rounds": 2}},
  "output_dir": {:?}{extra}
}}"#,
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_writes_reports_and_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let o = flekd(&["run", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("reports written to"));
    let out = dir.path().join("out");
    for f in ["manifest.json", "rounds.csv", "table.csv", "final.json", "fedavg.fkds", "flekd.fkds"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    // A prefix of the training columns is enough; the rest are zero-filled.
    let preprocess: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("preprocess.json")).unwrap()).unwrap();
    let columns: Vec<&str> = preprocess["columns"].as_array().unwrap()[..5]
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    let csv = dir.path().join("test.csv");
    fs::write(&csv, format!("{},label\n0,0,0,0,0,1\n1,2,3,4,5,6\n", columns.join(","))).unwrap();
    let o = flekd(&["eval", out.join("flekd.fkds").to_str().unwrap(), csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["rows"], 2);
    assert_eq!(report["standardized"], true);
    assert_eq!(report["class_names"][6], "UDPLag");

    fs::write(&csv, "").unwrap();
    let o = flekd(&["eval", out.join("flekd.fkds").to_str().unwrap(), csv.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn aggregator_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#", "seed_list": [1, 2]"#);
    let other = dir.path().join("other");
    let o = flekd(&[
        "run",
        config.to_str().unwrap(),
        "--aggregator",
        "fedavg",
        "--seed-override",
        "7",
        "--out-dir",
        other.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(other.join("fedavg.fkds").is_file());
    assert!(!other.join("flekd.fkds").exists());
    assert!(!other.join("seed_1").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(other.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"][0]["data"], 7);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn partition_prints_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let o = flekd(&["partition", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let layout: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(layout["clients"].as_array().unwrap().len(), 9);
    assert!(!dir.path().join("out").exists());

    let again = flekd(&["partition", config.to_str().unwrap()]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#", "alpha": -1"#);
    let o = flekd(&["run", config.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`alpha`"), "{}", stderr(&o));

    let config = write_config(dir.path(), r#", "speed": 3"#);
    let o = flekd(&["partition", config.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("speed"), "{}", stderr(&o));
}

#[test]
fn unknown_aggregator_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let o = flekd(&["run", config.to_str().unwrap(), "--aggregator", "fedprox"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("fedprox"), "{}", stderr(&o));
}
