use std::path::Path;
use std::process::{Command, Output};

use dagdiff::aig::{write_dataset, Aig, AndGate, DatasetRecord, Fanin};

fn dagdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagdiff"))
        .args(args)
        .env_remove("SEADAG_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn nand_file(dir: &Path) -> std::path::PathBuf {
    let aig = Aig::with_natural_levels(
        2,
        0,
        vec![AndGate {
            a: Fanin::new(0, false),
            b: Fanin::new(1, false),
        }],
        vec![Fanin::new(2, true)],
    )
    .unwrap();
    let rec = DatasetRecord {
        dag: aig.to_dag().unwrap(),
        tt: aig.simulate().unwrap(),
    };
    let path = dir.join("nand.jsonl");
    write_dataset(&path, [&rec]).unwrap();
    path
}

#[test]
fn gen_data_is_deterministic_with_normalized_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let out = dagdiff(&["gen-data", "--n-inputs", "3", "--n-outputs", "1", "--max-gates", "10", "--count", "100", "--seed", "7", "--out", s(p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 100);
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.stats.json")).unwrap()).unwrap();
    let sum = |v: &serde_json::Value| v.as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum::<f64>();
    assert!((sum(&stats["p_levels"]) - 1.0).abs() < 1e-9);
    for dist in stats["p_size"].as_object().unwrap().values() {
        assert!((sum(dist) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn simulate_prints_hex_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dagdiff(&["simulate", "--aig", s(&nand_file(dir.path()))]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "e");
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dagdiff(&["gen-data", "--count", "nope", "--out", "x"])), 2);
    assert_eq!(code(&dagdiff(&["frobnicate"])), 2);
    assert_eq!(code(&dagdiff(&["simulate", "--aig", "/no/such/file.jsonl"])), 3);
    assert_eq!(code(&dagdiff(&["selftest", "--suite", "nope"])), 2);
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let nand = nand_file(dir.path());
    let out = dagdiff(&["sample", "--ckpt", s(&bad), "--tt", "e", "--out", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(code(&out), 3);
    let out = dagdiff(&["refine", "--aig", s(&nand), "--tt", "zz"]);
    assert_eq!(code(&out), 2);
    let out = dagdiff(&["gen-data", "--n-inputs", "3", "--n-outputs", "1", "--max-gates", "2", "--out", s(&dir.path().join("g.jsonl"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn selftest_suite_passes() {
    let out = dagdiff(&["selftest", "--suite", "schedule"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("PASS"));
}

#[test]
fn refine_keeps_a_perfect_circuit() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("refined.json");
    let out = dagdiff(&["refine", "--aig", s(&nand_file(dir.path())), "--tt", "e", "--sims", "20", "--steps", "3", "--out", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["before"], 1.0);
    assert_eq!(v["after"], 1.0);
    assert_eq!(v["record"]["tt"][0], "e");
}

#[test]
fn train_sample_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let gen = |name: &str, seed: &str, count: &str| {
        let out = dagdiff(&["gen-data", "--n-inputs", "3", "--n-outputs", "1", "--max-gates", "8", "--count", count, "--seed", seed, "--out", s(&p(name))]);
        assert_eq!(code(&out), 0);
    };
    gen("train.jsonl", "1", "24");
    gen("test.jsonl", "2", "3");
    let cfg = r#"{"T":10,"beta":3,"lambda":1,"layers":1,"hidden":8,"heads":2,"learning_rate":0.001,"weight_decay":0.0,"batch_size":8,"epochs":2,"seed":0,"mode":"bottom-up","node_diffusion_enabled":false}"#;
    std::fs::write(p("cfg.json"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dagdiff"))
        .args(["train", "--config", s(&p("cfg.json")), "--data", s(&p("train.jsonl")), "--val", s(&p("test.jsonl")), "--out", s(&p("run"))])
        .env("SEADAG_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(p("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "epoch,step,l_graph,l_cond,total,val_l_graph,val_l_cond");
    assert_eq!(metrics.lines().count(), 3);
    let ckpt = p("run/model.ckpt");
    assert!(std::fs::read(&ckpt).unwrap().starts_with(b"SEADAGCK"));

    let out = dagdiff(&["sample", "--ckpt", s(&ckpt), "--tt", s(&p("test.jsonl")), "--num", "4", "--out", s(&p("samples.jsonl")), "--dot", s(&p("dots"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(p("samples.jsonl")).unwrap().lines().count(), 12);
    assert_eq!(std::fs::read_dir(p("dots")).unwrap().count(), 12);

    let out = dagdiff(&["sample", "--ckpt", s(&ckpt), "--tt", "96", "--num", "2", "--out", s(&p("one.jsonl"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(p("one.jsonl")).unwrap().lines().count(), 2);

    let out = dagdiff(&["eval", "--ckpt", s(&ckpt), "--test", s(&p("test.jsonl")), "--k", "2", "--report", s(&p("report.json"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("report.json")).unwrap()).unwrap();
    for key in ["validity", "accuracy", "level_emd", "histograms", "cases"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["cases"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(p("report.csv")).unwrap().starts_with("level,samples,reference"));

    // inputs are never modified
    let before = std::fs::read(p("test.jsonl")).unwrap();
    dagdiff(&["simulate", "--aig", s(&p("test.jsonl"))]);
    assert_eq!(before, std::fs::read(p("test.jsonl")).unwrap());
}
