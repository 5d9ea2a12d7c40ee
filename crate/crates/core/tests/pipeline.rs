//! End-to-end runs through the harness on small configs.

use leap_core::escape::{minima_selection_experiment, run_escape_trials, EscapeSettings, NoiseModel};
use leap_core::harness::{self, read_checkpoint, EscapeConfig, ExperimentConfig, RunStatus};
use leap_core::landscapes::curvature_family;

const TINY: &str = r#"
name = "pipeline"
epochs = 3
seeds = [4]
[model]
layer_dims = [5, 16, 3]
[data]
kind = "blobs"
n_per_class = 60
test_n_per_class = 30
num_classes = 3
dim = 5
separation = 4.0
batch_size = 20
[schedule]
kind = "cosine_warm_restart"
eta0 = 0.1
eta_min = 0.0
t0 = 2
t_mult = 1
[optimizer]
kind = "sgd"
momentum = 0.9
[leap]
sigma = 0.05
"#;

#[test]
fn training_writes_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(TINY).unwrap();
    let out = harness::run_training(&cfg, tmp.path()).unwrap().remove(0);
    assert_eq!(out.report.status, RunStatus::Completed);
    assert_eq!(out.report.per_epoch.len(), 3);
    let etas: Vec<f64> = out.report.per_epoch.iter().map(|e| e.eta).collect();
    for (got, want) in etas.iter().zip([0.1, 0.05, 0.1]) {
        assert!((got - want).abs() < 1e-12, "{etas:?}");
    }
    assert_eq!(out.report.lr_samples, out.report.updates);
    let dir = tmp.path().join("pipeline/4");
    assert_eq!(read_checkpoint(dir.join("checkpoint.bin")).unwrap(), out.theta);
    let csv = std::fs::read_to_string(dir.join("epochs.csv")).unwrap();
    assert!(csv.starts_with("# schema_version=1\nepoch,eta,train_loss,val_error\n"));
    assert!(out.report.final_test_error.unwrap() < 0.2);
}

#[test]
fn unwritable_output_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("not-a-dir");
    std::fs::write(&file, b"x").unwrap();
    let cfg = ExperimentConfig::from_toml_str(TINY).unwrap();
    assert!(matches!(harness::run_training(&cfg, &file), Err(leap_core::LeapError::Io { .. })));
}

#[test]
fn escape_trials_are_reproducible_and_independent_of_batching() {
    let cl = curvature_family(2.0, 8.0, 1.0, None).unwrap();
    let settings = EscapeSettings::new(0.01, 12.0, 1_000_000);
    let all = run_escape_trials(&cl.landscape, &cl.catalog[1], &settings, 40, 8).unwrap();
    let again = run_escape_trials(&cl.landscape, &cl.catalog[1], &settings, 20, 8).unwrap();
    assert_eq!(&all[..20], &again[..]);
    assert!(all.iter().all(|r| r.escaped));
}

#[test]
fn exact_gradient_dynamics_never_leave_a_minimum() {
    let cl = curvature_family(2.0, 8.0, 1.0, None).unwrap();
    let settings = EscapeSettings::new(0.01, 10.0, 5_000).with_noise_model(NoiseModel::ExactGradient);
    let records = run_escape_trials(&cl.landscape, &cl.catalog[0], &settings, 10, 1).unwrap();
    assert!(records.iter().all(|r| r.censored()));
}

#[test]
fn selection_without_noise_follows_the_starting_basin() {
    let cl = curvature_family(4.0, 4.0, 1.0, None).unwrap();
    let settings = EscapeSettings::new(0.01, 0.0, 3_000);
    let sel = minima_selection_experiment(&cl, &settings, 500, None, 2).unwrap();
    assert_eq!(sel.n_outside, 0);
    assert!((sel.flat_fraction - 0.5).abs() <= sel.ci);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let ok = if text.contains("[escape]") {
            EscapeConfig::from_toml_str(&text).is_ok()
        } else {
            ExperimentConfig::from_toml_str(&text).is_ok()
        };
        assert!(ok, "{} does not parse", path.display());
        n += 1;
    }
    assert!(n >= 8);
}
