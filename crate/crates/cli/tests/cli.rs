use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
epochs = 2
seeds = [1, 2]
[model]
layer_dims = [4, 8, 3]
[data]
kind = "blobs"
n_per_class = 40
test_n_per_class = 20
num_classes = 3
dim = 4
separation = 3.0
batch_size = 16
[schedule]
kind = "step_decay"
eta0 = 0.1
gamma = 0.5
step_size = 1
[optimizer]
kind = "sgd"
momentum = 0.9
[leap]
sigma = 0.01
[sweep]
sigmas = [0.05, 0.0]
"#;

const ESCAPE: &str = r#"
name = "esc"
[landscape]
kind = "quartic_double_well"
[escape]
mode = "sweep"
trials_per_point = 100
max_steps = 1000000
grid = [[0.01, 9.0], [0.01, 8.5], [0.01, 8.0], [0.01, 7.5]]
"#;

fn leap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leap")).args(args).env_remove("LEAP_OUTPUT_ROOT").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let o = leap(&["train", "--config", "/nonexistent/missing.toml"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/missing.toml"));
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    assert_eq!(code(&leap(&["--help"])), 0);
    for sub in ["train", "sweep", "escape", "flatness", "report"] {
        let o = leap(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("--config") && text.contains("--output"), "{sub}: {text}");
    }
}

#[test]
fn unknown_flags_and_subcommands_exit_one() {
    assert_eq!(code(&leap(&["train", "--config", "x.toml", "--bogus"])), 1);
    assert_eq!(code(&leap(&["frobnicate"])), 1);
    assert_eq!(code(&leap(&[])), 1);
    assert_eq!(code(&leap(&["train"])), 1);
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", &TINY.replace("epochs = 2", "epochs = 0"));
    let o = leap(&["train", "--config", &bad, "--output", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));
    let unknown = write(tmp.path(), "unknown.toml", &format!("{TINY}\nextra_key = 1\n"));
    assert_eq!(code(&leap(&["train", "--config", &unknown])), 1);
}

#[test]
fn train_writes_artifacts_and_seed_overrides_the_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    let out = tmp.path().join("out");
    let o = leap(&["train", "--config", &cfg, "--seed", "9", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "epochs.csv", "checkpoint.bin", "timing.json"] {
        assert!(out.join("tiny/9").join(f).exists(), "{f}");
    }
    assert!(!out.join("tiny/1").exists());
    let epochs = std::fs::read_to_string(out.join("tiny/9/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 2 + 2);
}

#[test]
fn output_root_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    let env_root = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_leap"))
        .args(["train", "--config", &cfg, "--seed", "1"])
        .env("LEAP_OUTPUT_ROOT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_root.join("tiny/1/report.json").exists());
}

#[test]
fn sweep_then_report_regenerates_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&leap(&["sweep", "--config", &cfg, "--output", out_s])), 0);
    let sweep_csv = std::fs::read(out.join("tiny/sweep.csv")).unwrap();
    std::fs::remove_file(out.join("tiny/sweep.csv")).unwrap();
    let o = leap(&["report", "--config", &cfg, "--output", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out.join("tiny/sweep.csv")).unwrap(), sweep_csv);
    assert!(out.join("tiny/runs.csv").exists());
}

#[test]
fn report_on_missing_artifacts_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tiny.toml", TINY);
    let o = leap(&["report", "--config", &cfg, "--output", tmp.path().join("empty").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn escape_twice_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "esc.toml", ESCAPE);
    let mut csvs = Vec::new();
    for rep in ["a", "b"] {
        let out = tmp.path().join(rep);
        let o = leap(&["escape", "--config", &cfg, "--seed", "3", "--output", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let dir = out.join("esc/3");
        csvs.push((std::fs::read(dir.join("points.csv")).unwrap(), std::fs::read(dir.join("records_0.csv")).unwrap()));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn escape_fit_failure_exits_two_but_keeps_records() {
    let tmp = tempfile::tempdir().unwrap();
    // Two points cannot support a fit.
    let text = ESCAPE.replace(", [0.01, 8.0], [0.01, 7.5]", "");
    let cfg = write(tmp.path(), "esc.toml", &text);
    let out = tmp.path().join("out");
    let o = leap(&["escape", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("widen the grid"));
    assert!(out.join("esc/0/points.csv").exists());
}
