use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
n_total = 300
feature_dim = 6
train = 200
val = 50
test = 50

[model]
encoder_layers = [6]
head_layers = [3, 1]

[training]
max_epochs = 3
batch_size = 8
learning_rate = 0.001
"#;

fn mtlw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtlw"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("d.csv");
    let o = mtlw(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = mtlw::data::load_csv(&out).unwrap();
    assert_eq!((d.len(), d.feature_dim()), (300, 6));
}

#[test]
fn run_emits_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("preset = \"itw2\"\n{SMALL}"));
    let out = dir.path().join("out");
    let o = mtlw(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "summary.csv",
        "mcnemar.csv",
        "results_itw2.csv",
        "roc_itw2_val.csv",
        "roc_itw2_test.csv",
        "schedule_itw2.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    let m = mtlw::harness::Manifest::from_json(&manifest).unwrap();
    assert_eq!(m.experiments[0].training.seed, 5);
}

#[test]
fn grid_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.toml",
        &format!("[grid]\nexperiments = [\"stl\", \"mtl3\", \"itw2\"]\n{SMALL}"),
    );
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            let o = mtlw(&[
                "grid",
                "--config",
                &cfg,
                "--out",
                out.to_str().unwrap(),
                "--jobs",
                "2",
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["summary.csv", "mcnemar.csv"] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let summary = fs::read_to_string(runs[0].join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn bad_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"nope\"\n");
    let o = mtlw(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown preset"), "{err}");

    let o = mtlw(&[
        "run",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
        "--out",
        "x",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
}
