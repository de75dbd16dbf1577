use std::path::Path;
use std::process::{Command, Output};

fn dssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dssl"))
        .args(args)
        .env("DSSL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, h: &str) {
    let out = dssl(&[
        "generate", "--nodes", "150", "--classes", "3", "--homophily", h, "--feature-dim", "6", "--out", s(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_graph_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.7");
    for f in ["edges.txt", "features.csv", "labels.txt"] {
        assert!(g.join(f).exists(), "{f}");
    }
    let m = json(&g.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["homophily"], 0.7);
    let h = m["details"]["measured_edge_homophily"].as_f64().unwrap();
    assert!((h - 0.7).abs() < 0.05, "{h}");
}

#[test]
fn missing_output_is_a_usage_error() {
    assert_eq!(dssl(&["generate", "--nodes", "10"]).status.code(), Some(2));
    assert_eq!(dssl(&["train"]).status.code(), Some(2));
}

#[test]
fn metrics_prints_json_and_rejects_unlabeled() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.6");
    let out = dssl(&["metrics", "--graph", s(&g)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_nodes"], 150);
    assert_eq!(v["n_classes"], 3);
    assert_eq!(v["cross_class_similarity"].as_array().unwrap().len(), 3);
    assert!((v["edge_homophily"].as_f64().unwrap() - 0.6).abs() < 0.05);

    let out = dssl(&["metrics", "--edges", s(&g.join("edges.txt")), "--features", s(&g.join("features.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no labels"));
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.9");
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "epochs = 3\nk = 3\neval_every = 1\n").unwrap();
    let run = tmp.path().join("run");
    let out = dssl(&["train", "--config", s(&cfg), "--graph", s(&g), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["loss_total", "loss_local", "loss_global", "entropy", "mean_pairwise_cosine", "wall_ms"] {
            assert!(row[key].is_number(), "{key} in {line}");
        }
        assert!(row["val_accuracy"].is_number());
    }
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    assert!(m["inputs"][0]["sha256"].as_str().unwrap().len() == 64);

    let q = tmp.path().join("q.csv");
    let r = tmp.path().join("r.csv");
    let report_path = tmp.path().join("report.json");
    let ckpt = run.join("model.ckpt");
    let out = dssl(&[
        "eval", "--checkpoint", s(&ckpt), "--graph", s(&g), "--dump-posteriors", s(&q), "--dump-reps", s(&r),
        "--out", s(&report_path), "--manifest", s(&tmp.path().join("em.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report, json(&report_path));
    assert!(report["accuracy"].as_f64().unwrap() > 0.5);

    let text = std::fs::read_to_string(&q).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "node_id,cluster_0,cluster_1,cluster_2");
    let mut rows = 0;
    for line in lines {
        let sum: f64 = line.split(',').skip(1).map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        rows += 1;
    }
    assert_eq!(rows, 150);

    // Dumped representations evaluate to the same numbers.
    let out = dssl(&["eval", "--reps", s(&r), "--graph", s(&g), "--manifest", s(&tmp.path().join("em2.json"))]);
    let again: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(again["accuracy"], report["accuracy"]);
    assert_eq!(again["nmi"], report["nmi"]);
    assert_eq!(again["representation_checksum"], report["representation_checksum"]);
}

#[test]
fn eval_reports_dimension_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.5");
    let other = tmp.path().join("other");
    let out = dssl(&["generate", "--nodes", "150", "--classes", "3", "--feature-dim", "4", "--out", s(&other)]);
    assert!(out.status.success());
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "epochs = 1\nk = 3\n").unwrap();
    let run = tmp.path().join("run");
    assert!(dssl(&["train", "--config", s(&cfg), "--graph", s(&g), "--out", s(&run), "--method", "gae"])
        .status
        .success());
    let out = dssl(&["eval", "--checkpoint", s(&run.join("model.ckpt")), "--graph", s(&other)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('6') && err.contains('4'), "{err}");
    // A gae checkpoint has no posteriors.
    let out = dssl(&["eval", "--checkpoint", s(&run.join("model.ckpt")), "--graph", s(&g), "--dump-posteriors", "/dev/null"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_training_exits_3_with_failed_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.5");
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 5\nlearning_rate = 1e200\n").unwrap();
    let run = tmp.path().join("run");
    let out = dssl(&["train", "--config", s(&cfg), "--graph", s(&g), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("epoch"));
}

#[test]
fn bad_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.5");
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "learning_rte = 0.1\n").unwrap();
    let out = dssl(&["train", "--config", s(&cfg), "--graph", s(&g), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn sweep_writes_trials_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "epochs = 1\nk = 3\n").unwrap();
    let csv = tmp.path().join("tau.csv");
    let out = dssl(&[
        "sweep", "--config", s(&cfg), "--axis", "tau", "--values", "0,0.9,1", "--seeds", "0,1", "--nodes", "120",
        "--classes", "3", "--feature-dim", "6", "--out", s(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,seed,accuracy,nmi,loss_final");
    assert_eq!(lines.iter().filter(|l| l.contains("mean±std")).count(), 3);
    assert_eq!(lines.len(), 1 + 6 + 3);
    assert!(tmp.path().join("tau.manifest.json").exists());

    let csv = tmp.path().join("h.csv");
    let out = dssl(&[
        "sweep", "--config", s(&cfg), "--axis", "homophily", "--values", "0,0.25,0.5,0.75,1", "--seeds", "0",
        "--methods", "dssl,gae", "--nodes", "120", "--classes", "3", "--feature-dim", "6", "--out", s(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("mean±std")).count(), 10);
    assert!(text.contains("homophily:gae,0.5,0,"));

    let out = dssl(&["sweep", "--axis", "tau", "--values", "0.5", "--methods", "gae", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seeded_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g");
    generate(&g, "0.5");
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "epochs = 2\nk = 3\nseed = 4\n").unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        assert!(dssl(&["train", "--config", s(&cfg), "--graph", s(&g), "--out", s(d)]).status.success());
    }
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
}
