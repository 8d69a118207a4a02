use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_explain-agree"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"{
    "dataset": {"kind": "synthetic", "n": 80, "features": 4, "separation": 3.0},
    "hidden_dims": [6],
    "training": {"epochs": 4},
    "attribution": {"lime_samples": 60, "sg_samples": 4, "ig_steps": 10},
    "seed": 3
}"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), CONFIG).unwrap();
    dir
}

#[test]
fn run_writes_the_output_tree() {
    let dir = workspace();
    let o = cli(&["run", "config.json", "--out", "res"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "dataset.json", "auc.csv", "attributions.csv", "results.csv", "boxplot.csv", "correlations.csv", "scatter.csv"] {
        assert!(dir.path().join("res").join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("best epoch"));
}

#[test]
fn stages_chain_and_correlate_reports_constant_full_k() {
    let dir = workspace();
    for stage in ["train", "explain", "agree"] {
        let o = cli(&[stage, "config.json", "--out", "res"], dir.path());
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = cli(&["correlate", "config.json", "--out", "res", "--metric", "FA", "--k", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.contains("FA k=4: rho undefined (constant_agreement)"), "{text}");
}

#[test]
fn agree_without_attributions_exits_1() {
    let dir = workspace();
    assert!(cli(&["train", "config.json", "--out", "res"], dir.path()).status.success());
    let o = cli(&["agree", "config.json", "--out", "res"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing attributions"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    let o = cli(&["run", "config.json", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));

    fs::write(dir.path().join("bad.json"), r#"{"dataset": {"kind": "synthetic"}}"#).unwrap();
    let o = cli(&["run", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("malformed config"));
    assert!(stderr(&o).contains("Usage"));

    let o = cli(&["run", "config.json", "--metric", "XYZ"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_exits_1() {
    let dir = workspace();
    let o = cli(&["run", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn single_method_prints_notice() {
    let dir = workspace();
    let o = cli(&["run", "config.json", "--out", "res", "--methods", "occlusion"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no method pairs"));
    assert!(!dir.path().join("res/results.csv").exists());
}

#[test]
fn synth_output_feeds_a_csv_config() {
    let dir = workspace();
    let o = cli(&["synth", "--n", "60", "--features", "3", "--seed", "2", "--out", "data/blobs.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(dir.path().join("data/blobs.csv")).unwrap();
    assert!(header.starts_with("x0,x1,x2,label\n"));
    fs::write(
        dir.path().join("data/csv.json"),
        r#"{
            "dataset": {"kind": "csv", "path": "blobs.csv", "target_column": "label", "positive_label": "1"},
            "hidden_dims": [4],
            "training": {"epochs": 3},
            "methods": ["vanilla_gradient", "occlusion", "kernel_shap"]
        }"#,
    )
    .unwrap();
    let o = cli(&["run", "data/csv.json", "--out", "res", "--seed", "9"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("res/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = workspace();
    assert!(cli(&["run", "config.json", "--out", "a", "--threads", "1"], dir.path()).status.success());
    assert!(cli(&["run", "config.json", "--out", "b", "--threads", "3"], dir.path()).status.success());
    for f in ["manifest.json", "attributions.csv", "results.csv", "correlations.csv", "snapshots/epoch_0004.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}
