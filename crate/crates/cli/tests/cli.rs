use std::path::Path;
use std::process::{Command, Output};

fn seqrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqrec")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn copy_config(dir: &Path, head: &str, epochs: usize) -> String {
    let path = dir.join(format!("config-{epochs}.json"));
    let cfg = format!(
        r#"{{
  "dataset": {{"name": "copy", "source": {{"kind": "synthetic_copy", "users": 150, "items": 30, "seed": 4}}}},
  "encoder": {{"kind": "gru", "hidden_size": 8, "embedding_size": 8}},
  "head": {head},
  "train": {{"max_epochs": {epochs}, "patience": 5, "seed": 3, "batch_size": 32, "learning_rate": 0.005}}
}}"#
    );
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn stats_on_two_sequence_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dir.path().join("sequences.txt");
    // A B A and A B C, ids 0 1 2
    std::fs::write(&seqs, "0\t0,1,0\n1\t0,1,2\n").unwrap();
    let out_dir = dir.path().join("stats");
    let stdout = ok(&seqrec(&["stats", seqs.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    assert!(stdout.lines().any(|l| l == "2,without_dup,2,1,0.5"), "{stdout}");
    assert_eq!(std::fs::read_to_string(out_dir.join("repetition.csv")).unwrap(), stdout);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn prep_writes_dense_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let mut text = String::from("user,item,ts\n");
    for u in 0..4 {
        for t in 0..6 {
            text.push_str(&format!("u{u},i{},{}\n", (u + t) % 5, 100 - t));
        }
    }
    text.push_str("broken row\n");
    std::fs::write(&log, text).unwrap();
    let out = dir.path().join("prep");
    let args = [
        "prep", "--input", log.to_str().unwrap(), "--out", out.to_str().unwrap(), "--delimiter", ",",
        "--user-column", "user", "--item-column", "item", "--timestamp-column", "ts", "--min-seq-len", "3",
        "--min-item-freq", "1",
    ];
    let stdout = ok(&seqrec(&args));
    assert!(stdout.contains("4 users, 5 items, 24 interactions (1 malformed rows skipped)"), "{stdout}");
    let seqs = std::fs::read_to_string(out.join("sequences.txt")).unwrap();
    assert_eq!(seqs.lines().count(), 4);
    // timestamps decrease along the file, so each history comes out reversed
    let items = std::fs::read_to_string(out.join("items.tsv")).unwrap();
    assert!(items.contains("i0"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["malformed_rows"], 1);
}

#[test]
fn cutoff_not_below_catalog_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = copy_config(dir.path(), r#"{"variant": "cpr", "k_list": [30]}"#, 1);
    let run = dir.path().join("run");
    let out = seqrec(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let first = stderr.lines().next().unwrap();
    assert!(first.starts_with("error kind=config message=\""), "{stderr}");
    assert!(!run.join("model.ckpt").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = copy_config(dir.path(), r#"{"variant": "c", "topk": 3}"#, 1);
    let out = seqrec(&["train", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("topk"));
}

#[test]
fn train_evaluate_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = copy_config(dir.path(), r#"{"variant": "cpr", "k_list": [5]}"#, 2);
    let run = dir.path().join("run");
    let stdout = ok(&seqrec(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]));
    for f in ["config.json", "manifest.json", "metrics.csv", "model.ckpt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();

    // evaluating the saved checkpoint on test reproduces the training run's numbers
    let ev = dir.path().join("eval");
    let again = ok(&seqrec(&["evaluate", "--run", run.to_str().unwrap(), "--out", ev.to_str().unwrap()]));
    assert_eq!(again, stdout);
    assert_eq!(std::fs::read_to_string(ev.join("metrics.csv")).unwrap(), metrics);

    // a report over one run carries its metric values verbatim
    let rep = dir.path().join("report");
    ok(&seqrec(&["report", run.to_str().unwrap(), "--out", rep.to_str().unwrap()]));
    let table = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(metrics.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let line = format!("{},{},{},{}", &rec[col("variant")], &rec[col("dataset")], &rec[col("metric")], &rec[col("value")]);
        let quoted = format!("\"{}\",{},{},{}", &rec[col("variant")], &rec[col("dataset")], &rec[col("metric")], &rec[col("value")]);
        assert!(table.contains(&line) || table.contains(&quoted), "{line} not in\n{table}");
        n += 1;
    }
    assert_eq!(n, 3);
    assert!(rep.join("report.md").exists());
}

#[test]
fn same_seed_same_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = copy_config(dir.path(), r#"{"variant": "c"}"#, 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&seqrec(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]));
    ok(&seqrec(&["--threads", "2", "train", "--config", &cfg, "--out", b.to_str().unwrap()]));
    for f in ["manifest.json", "metrics.csv", "model.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn grid_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.json");
    std::fs::write(
        &path,
        r#"{
  "dataset": {"name": "copy", "source": {"kind": "synthetic_copy", "users": 100, "items": 30, "seed": 2}},
  "encoder": {"kind": "gru", "hidden_size": 8, "embedding_size": 8},
  "head": {"variant": "c"},
  "train": {"max_epochs": 1, "seed": 1},
  "grid": {"learning_rate": [0.001, 0.01], "batch_size": [16, 32]}
}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&seqrec(&["grid", "--config", path.to_str().unwrap(), "--out", run.to_str().unwrap()]));
    let grid = std::fs::read_to_string(run.join("grid.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 1);
}

#[test]
fn schema_is_json() {
    let text = ok(&seqrec(&["schema"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["type"], "object");
}

#[test]
fn example_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = seqrec_core::experiment::ExperimentConfig::load(&path).unwrap();
        cfg.validate_static().unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
