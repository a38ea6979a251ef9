use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfl"))
        .args(args)
        .env_remove("DFL_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")))
        .unwrap_or_else(|| panic!("no '{key}' in {text}"))
        .to_string()
}

/// Size column of each client row in a partition report.
fn partition_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(2)
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

#[test]
fn topology_complete_spectrum() {
    let o = dfl(&["topology", "--kind", "complete", "--nodes", "5"]);
    assert!(o.status.success());
    let l2: f64 = field(&stdout(&o), "lambda2").parse().unwrap();
    assert!((l2 - 5.0).abs() < 1e-9);
}

#[test]
fn topology_small_world_edges() {
    let o = dfl(&["topology", "--kind", "ws", "--nodes", "20", "--k", "4", "--p", "0.5", "--seed", "1", "--edges"]);
    let text = stdout(&o);
    assert_eq!(field(&text, "edges"), "40");
    assert_eq!(field(&text, "connected"), "true");
    // header lines plus one line per edge
    assert_eq!(text.lines().count(), 5 + 40);
}

#[test]
fn topology_odd_degree_is_a_usage_error() {
    let o = dfl(&["topology", "--kind", "lattice", "--nodes", "20", "--k", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("even"), "{}", stderr(&o));
}

#[test]
fn partition_skewed_gives_single_label_clients() {
    let o = dfl(&["partition", "--scheme", "skewed", "--U", "1", "--K", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = partition_rows(&stdout(&o));
    assert_eq!(rows.len(), 10);
    for r in rows {
        assert_eq!(r[2], "1");
        assert_eq!(r[3], "1.0000");
        assert_eq!(r[4], "1.0000");
    }
}

#[test]
fn partition_iid_sizes_within_one() {
    let o = dfl(&["partition", "--scheme", "iid", "--K", "7"]);
    let sizes: Vec<usize> = partition_rows(&stdout(&o)).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(sizes.len(), 7);
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

#[test]
fn partition_gaussian_respects_batch_floor() {
    let o = dfl(&["partition", "--scheme", "gaussian", "--sigma2", "10", "--batch", "64"]);
    let sizes: Vec<usize> = partition_rows(&stdout(&o)).iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(sizes.iter().all(|&s| s >= 64), "{sizes:?}");
    assert!(sizes.iter().sum::<usize>() <= 6000);
}

#[test]
fn presets_are_listed() {
    let text = stdout(&dfl(&["presets"]));
    for name in ["table1-E1", "table2-E1", "skewed-sharing-S0.1", "segmented-directed", "comm-cost"] {
        assert!(text.contains(name), "{name}");
    }
}

fn run_preset(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--preset", "table1-E1", "--set", "epochs=1", "--out", out];
    args.extend_from_slice(extra);
    dfl(&args)
}

#[test]
fn run_writes_artifacts_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run_preset(&a, &["--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "metrics.csv", "summary.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert!(run_preset(&b, &["--workers", "2"]).status.success());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());

    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,client_id,train_loss,test_acc,best_acc,mean_acc,dist_min,dist_max,consensus_iters,floats_shared\n"));
    assert_eq!(csv.lines().count(), 1 + 6);

    // the manifest's config text reproduces the run
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "table1-E1");
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, manifest["config_text"].as_str().unwrap()).unwrap();
    let c = tmp.path().join("c");
    let o = dfl(&["run", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());

    let t = dfl(&["thresholds", "--csv", a.join("metrics.csv").to_str().unwrap(), "--p", "1", "--p", "99.99"]);
    assert_eq!(stdout(&t), "e_1 1\ne_99.99 -\n");
}

#[test]
fn oversized_batch_names_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_preset(tmp.path(), &["--set", "batch=2000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("K <= N / B"), "{}", stderr(&o));
}

#[test]
fn bad_config_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "clients = 4\nthis line is wrong\n").unwrap();
    let o = dfl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));

    let missing = tmp.path().join("missing.cfg");
    let o = dfl(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn divergence_exits_3_with_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_preset(tmp.path(), &["--set", "optimizer=sgd", "--set", "lr=1e12", "--set", "epochs=3"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["diverged_at"].as_u64().is_some());
    assert!(tmp.path().join("metrics.csv").is_file());
}
