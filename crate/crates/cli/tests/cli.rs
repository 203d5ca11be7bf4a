use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
library_size = 40
eval_size = 16
train_size = 4
iterations = 2
episodes = 1
hidden = 16
predictor_hidden = 16
sac_batch_size = 16
warmup = 32
epochs = 2
batch_size = 8
reweight_draws = 2000
"#;

fn clic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clic")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = clic(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    cfg
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path());
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&["gen", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    ok(&["gen", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("library.jsonl")).unwrap(), std::fs::read(b.join("library.jsonl")).unwrap());
    let m = json(&a.join("gen_manifest.json"));
    assert_eq!(m["seed"], 7);
    assert!(m["finished"].is_string());
    // The snapshot parses back to the config the run used.
    let snap = std::fs::read_to_string(a.join("gen_config.toml")).unwrap();
    assert!(snap.contains("seed = 7"));
    ok(&["validate", "--config", s(&a.join("gen_config.toml")), "--library", s(&a.join("library.jsonl")), "--out", s(&d.path().join("v"))]);
    ok(&["stats", "--library", s(&a.join("library.jsonl")), "--out", s(&d.path().join("st"))]);
    assert!(json(&d.path().join("st/stats.json"))["scenarios"] == 40);
}

#[test]
fn train_then_analyses() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path());
    let lib_dir = d.path().join("lib");
    ok(&["gen", "--config", s(&cfg), "--out", s(&lib_dir)]);
    let lib = lib_dir.join("library.jsonl");
    let run = d.path().join("run");
    ok(&["train", "--config", s(&cfg), "--library", s(&lib), "--strategy", "clic", "--out", s(&run)]);
    for k in 1..=2 {
        assert!(run.join(format!("checkpoints/agent_{k:03}.bin")).exists());
        assert!(run.join(format!("checkpoints/predictor_{k:03}.bin")).exists());
        assert!(run.join(format!("records/iteration_{k:03}.json")).exists());
    }
    let manifest = json(&run.join("train_manifest.json"));
    assert_eq!(manifest["library_hash"].as_str().unwrap().len(), 64);

    ok(&["matrix", "--library", s(&lib), "--run", s(&run)]);
    let csv = std::fs::read_to_string(run.join("matrix/matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    ok(&["test", "--library", s(&lib), "--run", s(&run), "--out", s(&d.path().join("t"))]);
    let m = json(&d.path().join("t/metrics.json"));
    for k in ["SR", "FNR", "TNR", "CPS", "CPM", "vel", "succ_vel", "acc", "jerk", "ang_vel", "lat_acc"] {
        assert!(m.get(k).is_some(), "{k} missing");
    }
    // An explicit baseline table gives the same report.
    ok(&[
        "test", "--library", s(&lib),
        "--agent", s(&run.join("checkpoints/agent_002.bin")),
        "--baseline", s(&d.path().join("t/baseline_outcomes.json")),
        "--out", s(&d.path().join("t2")),
    ]);
    assert_eq!(m, json(&d.path().join("t2/metrics.json")));

    ok(&["reweight", "--library", s(&lib), "--run", s(&run)]);
    assert!(run.join("reweight/histograms.csv").exists());
    ok(&["individualize", "--library", s(&lib), "--run", s(&run)]);
    assert!(run.join("individualize/individualization.json").exists());
    ok(&["export", "--run", s(&run)]);
    let it = std::fs::read_to_string(run.join("export/iterations.csv")).unwrap();
    assert_eq!(it.lines().count(), 3);

    // Re-running over a finished run resumes to the same records.
    let before = std::fs::read(run.join("records/iteration_002.json")).unwrap();
    ok(&["train", "--config", s(&cfg), "--library", s(&lib), "--strategy", "clic", "--out", s(&run)]);
    assert_eq!(before, std::fs::read(run.join("records/iteration_002.json")).unwrap());
    // A different config cannot reuse the directory.
    let o = clic(&["train", "--config", s(&cfg), "--library", s(&lib), "--strategy", "rand", "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes_and_error_line() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "iterations = 0\n").unwrap();
    let o = clic(&["gen", "--config", s(&bad), "--out", s(&d.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: "), "{err}");

    let o = clic(&["stats", "--library", s(&d.path().join("missing.jsonl")), "--out", s(&d.path().join("y"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[data]: "));

    let garbage = d.path().join("g.jsonl");
    std::fs::write(&garbage, "{not json}\n").unwrap();
    let o = clic(&["stats", "--library", s(&garbage), "--out", s(&d.path().join("z"))]);
    assert_eq!(o.status.code(), Some(3));

    let o = clic(&["train", "--library", s(&garbage), "--strategy", "best"]);
    assert_eq!(o.status.code(), Some(2));
}
