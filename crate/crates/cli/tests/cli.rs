use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cgpfl"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn synthetic() -> PathBuf {
    configs().join("synthetic.toml")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_idx(dir: &Path, per_class: usize, classes: u8, side: u32) -> (PathBuf, PathBuf) {
    let count = per_class * classes as usize;
    let mut images = Vec::new();
    images.extend(0x0803u32.to_be_bytes());
    images.extend((count as u32).to_be_bytes());
    images.extend(side.to_be_bytes());
    images.extend(side.to_be_bytes());
    let mut labels = Vec::new();
    labels.extend(0x0801u32.to_be_bytes());
    labels.extend((count as u32).to_be_bytes());
    for i in 0..count {
        let y = (i % classes as usize) as u8;
        labels.push(y);
        for p in 0..side * side {
            images.push(((p as usize * 31 + i * 7 + y as usize * 50) % 256) as u8);
        }
    }
    let (ip, lp) = (dir.join("images.idx3"), dir.join("labels.idx1"));
    fs::write(&ip, images).unwrap();
    fs::write(&lp, labels).unwrap();
    (ip, lp)
}

#[test]
fn run_writes_requested_rounds_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&["run", "--config", s(&synthetic()), "--set", "T=5", "--out", s(out)], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let metrics = lines(&a.join("metrics.csv"));
    assert_eq!(metrics.len(), 6);
    assert_eq!(
        metrics[0],
        "round,mean_test_accuracy,mean_train_loss,grad_norm_sq_avg,changed_clients,cost_value,wall_ms"
    );
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert!(a.join("assignments.json").exists());
    assert!(a.join("per_client_accuracy.csv").exists());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["config_snapshot"]["hyperparameters"]["T"], 5);
    assert!(manifest["finished_at"].is_string());
    let paths: Vec<&str> = manifest["output_paths"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(paths.contains(&"metrics.csv"));

    // a run directory is enough to reproduce itself
    let c = tmp.path().join("c");
    let o = run(&["run", "--config", s(&a.join("manifest.json")), "--out", s(&c)], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());

    // nothing is written next to the outputs
    let mut entries: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["a", "b", "c"]);
}

#[test]
fn heuristic_run_writes_score_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    let o = run(
        &["run", "--config", s(&synthetic()), "--set", "algorithm=cgpfl_heur", "--set", "T=3", "--out", s(&out)],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = lines(&out.join("heuristic.csv"));
    assert_eq!(table[0], "K,complexity_term,cost_term,e(K)");
    assert_eq!(table.len(), 7);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", "--config", "missing.toml", "--out", s(&out)], tmp.path());
    assert_eq!(code(&o), 2);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[hyperparameters]\nT = 5\nlambda = \"twelve\"\n[data]\nsource = \"shards\"\ndir = \"x\"\n").unwrap();
    let o = run(&["run", "--config", s(&bad), "--out", s(&out)], tmp.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    let o = run(&["run", "--config", s(&synthetic()), "--set", "K=40", "--out", s(&out)], tmp.path());
    assert_eq!(code(&o), 2);
    let o = run(&["run", "--config", s(&synthetic()), "--set", "bogus", "--out", s(&out)], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_3_with_context() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", "--config", s(&synthetic()), "--set", "eta=1e300", "--out", s(&out)], tmp.path());
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("round 0") && err.contains("client"), "{err}");
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn sweep_over_k_prefers_true_context_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = run(
        &["sweep", "--config", s(&synthetic()), "--param", "K", "--values", "1,2,3", "--out", s(&out)],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out.join("summary.csv"));
    assert_eq!(rows.len(), 4);
    let acc: Vec<(String, f64)> = rows[1..]
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            assert_eq!(f[2], "ok");
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect();
    let best = acc.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, "3");
}

#[test]
fn sweep_lambda_and_empty_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = run(
        &["sweep", "--config", s(&synthetic()), "--param", "lambda", "--values", "11,12", "--set", "T=2", "--out", s(&out)],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for v in ["11", "12"] {
        let d = out.join(format!("lambda_{v}"));
        for f in ["manifest.json", "metrics.csv", "per_client_accuracy.csv", "assignments.json"] {
            assert!(d.join(f).exists(), "{}", d.join(f).display());
        }
    }
    let o = run(
        &["sweep", "--config", s(&synthetic()), "--param", "K", "--values", "", "--out", s(&tmp.path().join("e"))],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    let o = run(
        &["sweep", "--config", s(&synthetic()), "--param", "T", "--values", "1", "--out", s(&tmp.path().join("e"))],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_reports_failed_values_and_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = run(
        &["sweep", "--config", s(&synthetic()), "--param", "K", "--values", "40,2", "--set", "T=2", "--out", s(&out)],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    let rows = lines(&out.join("summary.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains("error"));
    assert!(rows[2].ends_with(",ok"));
}

fn shard_checksums(dir: &Path) -> Vec<String> {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["clients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["sha256"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn gen_data_synthetic_is_deterministic_and_runnable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen-data", "synthetic", "--seed", "3", "--out", s(out)], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bins = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin"))
        .count();
    assert_eq!(bins, 12);
    assert_eq!(shard_checksums(&a), shard_checksums(&b));

    let cfg = tmp.path().join("shards.toml");
    fs::write(&cfg, "[hyperparameters]\nK = 3\nT = 2\n\n[data]\nsource = \"shards\"\ndir = \"a\"\n").unwrap();
    let o = run(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_partition_idx() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx(tmp.path(), 30, 10, 4);
    let out = tmp.path().join("p");
    let args = [
        "gen-data", "partition-idx", "--images", s(&images), "--labels", s(&labels), "--clients", "6",
        "--min-size", "8", "--max-size", "12", "--seed", "2", "--out", s(&out),
    ];
    let o = run(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let clients = m["clients"].as_array().unwrap();
    assert_eq!(clients.len(), 6);
    for c in clients {
        assert_eq!(c["class_set"].as_array().unwrap().len(), 3);
        let n = c["n_train"].as_u64().unwrap() + c["n_test"].as_u64().unwrap();
        assert!((8..=12).contains(&n));
    }

    let broken = tmp.path().join("broken.idx3");
    fs::write(&broken, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    let o = run(
        &["gen-data", "partition-idx", "--images", s(&broken), "--labels", s(&labels), "--out", s(&tmp.path().join("x"))],
        tmp.path(),
    );
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn mnist_config_runs_on_small_idx_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx(tmp.path(), 40, 10, 4);
    let out = tmp.path().join("m");
    let images_set = format!("data.images={:?}", s(&images));
    let labels_set = format!("data.labels={:?}", s(&labels));
    let cfg = configs().join("mnist_mlr.toml");
    let args = [
        "run", "--config", s(&cfg), "--set", "T=5", "--set", &images_set, "--set", &labels_set,
        "--set", "data.partition.shard_size_min=8", "--set", "data.partition.shard_size_max=16",
        "--out", s(&out),
    ];
    let o = run(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out.join("metrics.csv")).len(), 6);
}
