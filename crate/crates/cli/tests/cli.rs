use std::path::Path;
use std::process::{Command, Output};

fn dedes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dedes"))
        .args(args)
        .env("DEDES_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, m: usize, extra: &str) -> String {
    let path = dir.join("config.json");
    let body = format!(
        r#"{{
  "schema_version": 1,
  "dataset": {{"kind": "synthetic", "classes": 4, "dim": 6, "n": 800, "separation": 3.0}},
  "partition": {{"strategy": "noniid_lds", "beta": 0.5}},
  "m": {m},
  "train": {{"epochs": 8}},
  "selection": {{"k": 3}},
  "seeds": [3],
  "out_dir": {:?}{extra}
}}"#,
        dir.join("out").display().to_string()
    );
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn all_covers_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10, "");
    let out = dedes(&["all", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,partition,m,K,method,seed,accuracy,mean_bd,mean_ck,rank,total_teams"
    );
    let methods: Vec<&str> = lines.map(|l| l.split(',').nth(4).unwrap()).collect();
    for m in ["dedes", "cv", "ds", "rs", "as", "lds", "fedavg", "meanavg", "oracle"] {
        assert!(methods.contains(&m), "missing {m}");
    }
    assert!(csv.contains(",1023\n"));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), 6, r#", "sweep_ks": [1, 2, 3]"#);
        assert!(dedes(&["all", "--config", &cfg]).status.success());
    }
    for f in ["report.csv", "report.json", "report_sweep.csv"] {
        assert_eq!(
            std::fs::read(a.path().join("out").join(f)).unwrap(),
            std::fs::read(b.path().join("out").join(f)).unwrap()
        );
    }
}

#[test]
fn inspect_guard_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 20, "");
    for stage in ["synth", "partition", "train"] {
        assert!(dedes(&[stage, "--config", &cfg]).status.success(), "{stage}");
    }
    let out = dedes(&["inspect", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
    let raised = dedes(&["inspect", "--config", &cfg, "--m-cap", "4"]);
    assert_eq!(raised.status.code(), Some(1));
}

#[test]
fn config_errors_exit_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"schema_version": 1, "dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n": 30},
            "partition": {"strategy": "homo"}, "m": "ten", "seeds": [0]}"#,
    )
    .unwrap();
    let out = dedes(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`m`"));

    let missing = dedes(&["synth", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn stage_order_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 4, "");
    assert_eq!(dedes(&["select", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 4, "");
    let alt = dir.path().join("alt");
    let out = dedes(&["synth", "--config", &cfg, "--seed", "9", "--out", alt.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(alt.join("seed-9/dataset.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn csv_ingestion_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("f0,f1,label\n");
    for i in 0..120 {
        let c = i % 3;
        text.push_str(&format!("{},{},{c}\n", c as f64 * 4.0 + (i % 7) as f64 * 0.1, (i % 5) as f64 * 0.2));
    }
    let data = dir.path().join("points.csv");
    std::fs::write(&data, text).unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"schema_version": 1, "dataset": {{"kind": "csv", "path": {:?}}},
                "partition": {{"strategy": "homo"}}, "m": 3, "train": {{"epochs": 5}},
                "selection": {{"k": 2}}, "seeds": [0], "out_dir": {:?}}}"#,
            data.display().to_string(),
            dir.path().join("out").display().to_string()
        ),
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(dedes(&["synth", "--config", cfg]).status.code(), Some(1));
    let out = dedes(&["all", "--config", cfg, "--header"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("points,homo,3,2,"));
}
