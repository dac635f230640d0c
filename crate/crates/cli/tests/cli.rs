use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn bhasha(out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bhasha"));
    cmd.args(args).arg("--config").arg(tiny()).arg("--out").arg(out).env_remove("BHASHA_SEED");
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_byte_identical_and_guards_existing_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&bhasha(a.path(), &["generate"])), 0);
    assert_eq!(code(&bhasha(b.path(), &["generate"])), 0);
    for f in ["hrl.jsonl", "lrl.jsonl", "lexicon.tsv"] {
        let x = std::fs::read(a.path().join("data").join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join("data").join(f)).unwrap(), "{f}");
    }
    let again = bhasha(a.path(), &["generate"]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    assert_eq!(code(&bhasha(a.path(), &["generate", "--force"])), 0);
}

#[test]
fn invalid_settings_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["synthetic.num_classes=1", "train.retention=1.5", "encoder.num_heads=3", "train.no_such_key=1"] {
        let o = bhasha(dir.path(), &["generate", "--set", bad]);
        assert_eq!(code(&o), 1, "{bad}");
        assert!(!stderr(&o).is_empty());
    }
    let o = bhasha(dir.path(), &["train", "--method", "getr_sage"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn train_before_generate_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhasha(dir.path(), &["train", "--method", "joint"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_without_checkpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bhasha(dir.path(), &["generate"])), 0);
    let o = bhasha(dir.path(), &["eval", "--method", "joint", "--seed", "0"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(code(&bhasha(dir.path(), &["report"])), 3);
}

#[test]
fn embedding_transfer_without_lexicon_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bhasha(dir.path(), &["generate"])), 0);
    std::fs::write(dir.path().join("data/lexicon.tsv"), "").unwrap();
    let o = bhasha(dir.path(), &["train", "--method", "hal+tet"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn train_is_deterministic_and_feeds_eval_and_report() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&bhasha(d.path(), &["generate"])), 0);
        let o = bhasha(d.path(), &["train", "--method", "getr_gat+hal", "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("getr gat  hal on  tet off"));
    }
    let run = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join("runs/getr_gat+hal/seed-4").join(f)).unwrap();
    assert_eq!(run(&a, "metrics.json"), run(&b, "metrics.json"));
    assert_eq!(run(&a, "epochs.csv"), run(&b, "epochs.csv"));
    assert_eq!(run(&a, "checkpoint.json"), run(&b, "checkpoint.json"));
    let timings: serde_json::Value = serde_json::from_slice(&run(&a, "timings.json")).unwrap();
    assert_eq!(timings["epoch_seconds"].as_array().unwrap().len(), 2);

    assert_eq!(code(&bhasha(a.path(), &["train", "--method", "getr_gat+hal", "--seed", "4"])), 1);

    let o = bhasha(a.path(), &["eval", "--method", "getr_gat+hal", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&run(&a, "metrics.json")).unwrap();
    let eval: serde_json::Value = serde_json::from_slice(&run(&a, "eval.json")).unwrap();
    assert_eq!(metrics["test"], eval["test"]);

    let o = bhasha(a.path(), &["report"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("getr_gat+hal,4,"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bhasha(dir.path(), &["generate"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_bhasha"))
        .args(["train", "--method", "joint", "--config"])
        .arg(tiny())
        .arg("--out")
        .arg(dir.path())
        .env("BHASHA_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("runs/joint/seed-9/metrics.json").exists());
}

#[test]
fn gradcheck_passes() {
    let o = Command::new(env!("CARGO_BIN_EXE_bhasha")).args(["gradcheck", "--configs", "3"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 8);
}

#[test]
fn ablation_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhasha(dir.path(), &["ablate", "--sweep", "gnn_depth", "--seeds", "0,1", "--methods", "getr_gat"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("ablate/gnn_depth.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(std::fs::read_to_string(dir.path().join("ablate/gnn_depth.md")).unwrap().contains("±"));
}
