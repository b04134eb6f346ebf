use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use delta_core::harness::ExperimentConfig;

fn delta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delta"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_writes_a_config_that_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = delta(dir.path(), &["gen", "--seed", "11", "--out", "c.toml"]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("c.toml")).unwrap();
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::benchmark(11));
    assert_eq!(cfg.to_toml(), text);
    // stdout variant is the same text
    assert_eq!(stdout(&delta(dir.path(), &["gen", "--seed", "11"])), text);
}

#[test]
fn run_uses_the_config_file_and_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    assert!(delta(dir.path(), &["gen", "--out", "c.toml"]).status.success());
    let o = delta(
        dir.path(),
        &["run", "--config", "c.toml", "--budget-per-class", "5", "--out", "out"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.jsonl",
        "history.jsonl",
        "summary.txt",
        "config.toml",
        "transcript.bin",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let saved = ExperimentConfig::from_toml(&fs::read_to_string(dir.path().join("out/config.toml")).unwrap()).unwrap();
    assert_eq!(saved.run.sampling.budget_per_class, 5);
    let metrics: serde_json::Value =
        serde_json::from_str(fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(metrics["method"], "delta");
    assert_eq!(
        fs::read_to_string(dir.path().join("out/history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        5
    );

    let ins = delta(dir.path(), &["inspect", "out/transcript.bin"]);
    assert!(ins.status.success());
    let kinds: Vec<String> = stdout(&ins)
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["type"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(kinds.len(), 11);
    assert_eq!(kinds[0], "directory_download");
    assert!(kinds[1..]
        .chunks(2)
        .all(|p| p[0] == "weight_upload" && p[1] == "enrichment_response"));
}

#[test]
fn bench_prints_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = delta(dir.path(), &["bench", "--seeds", "1", "--out", "b"]);
    assert!(o.status.success());
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, name) in rows.iter().zip(["delta", "random", "vanilla"]) {
        assert!(row.starts_with(name), "{row}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("b/bench.txt")).unwrap(), table);
    assert_eq!(
        fs::read_to_string(dir.path().join("b/bench.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(delta(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(delta(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(delta(dir.path(), &["run", "--method", "nope"]).status.code(), Some(1));
    let missing = delta(dir.path(), &["run", "--config", "missing.toml"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.toml"));
    assert_eq!(delta(dir.path(), &["run", "--tau=-1"]).status.code(), Some(2));
    assert_eq!(delta(dir.path(), &["bench", "--seeds", "0"]).status.code(), Some(2));
    fs::write(dir.path().join("junk.bin"), b"\x00\x00\x00\x05hello").unwrap();
    assert_eq!(delta(dir.path(), &["inspect", "junk.bin"]).status.code(), Some(2));
}

#[test]
fn oracle_reports_small_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let o = delta(dir.path(), &["oracle", "--instances", "3", "--seed", "7"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    let worst: f64 = text
        .lines()
        .last()
        .unwrap()
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(worst <= 0.02);
}
