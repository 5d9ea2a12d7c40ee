//! The `flatness` experiment: train a vanilla and a LEAP arm over the
//! configured seeds, then compare curvature at the final parameters.

use std::path::Path;

use serde::Serialize;

use super::config::{prepare_data, ExperimentConfig};
use super::train::{train_on, write_run, RunOutcome};
use super::{ensure_writable_dir, write_atomic, CODE_VERSION, SCHEMA_VERSION};
use crate::data::Dataset;
use crate::error::{LeapError, Result};
use crate::flatness::{compare_flatness, dense_oracle_check, flatness_subset, FlatnessComparison, FlatnessSettings, OracleCheck, TrainedRun};
use crate::models::{init_params, MlpSpec};
use crate::perturbation::LeapConfig;
use crate::rng::{domain, RngStream};

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessExperiment {
    pub name: String,
    pub schema_version: u32,
    pub code_version: String,
    pub settings: FlatnessSettings,
    pub measure_seed: u64,
    /// Training examples the curvature was measured on.
    pub examples_used: usize,
    pub comparison: FlatnessComparison,
    /// Power iteration against a dense eigendecomposition on a small subnet.
    pub oracle: OracleCheck,
    pub config: ExperimentConfig,
}

/// Subnet for the dense cross-check: the first three input features feeding
/// two hidden units (at most 50 parameters for up to 10 classes).
pub fn oracle_subnet(train: &Dataset, num_classes: usize, seed: u64) -> Result<(MlpSpec, Vec<f64>, Dataset)> {
    let features = train.dim().min(3);
    let spec = MlpSpec::new(&[features, 2, num_classes]);
    let rows = train.len().min(500);
    let idx: Vec<usize> = (0..rows).collect();
    let mut small = train.subset(&idx, format!("{}[oracle]", train.name));
    small.inputs = small.inputs.slice(ndarray::s![.., ..features]).to_owned();
    let theta = init_params(&spec, &mut RngStream::for_domain(seed, domain::POWER_ITERATION, u32::MAX as u64 + 1))?.values;
    Ok((spec, theta, small))
}

/// Curvature comparison on already trained runs.
pub fn measure(cfg: &ExperimentConfig, train: &Dataset, vanilla: &[RunOutcome], leap: &[RunOutcome], measure_seed: u64) -> Result<FlatnessExperiment> {
    let settings = cfg.flatness.unwrap_or_default();
    let spec = cfg.model.resolve()?;
    let as_runs = |runs: &[RunOutcome]| -> Vec<TrainedRun> {
        runs.iter()
            .map(|r| TrainedRun {
                seed: r.report.metadata.seed,
                spec: spec.clone(),
                theta: r.theta.clone(),
            })
            .collect()
    };
    let comparison = compare_flatness(&as_runs(vanilla), &as_runs(leap), train, &settings, measure_seed)?;
    let (sub_spec, sub_theta, sub_data) = oracle_subnet(train, spec.num_classes(), measure_seed)?;
    let oracle_settings = FlatnessSettings {
        max_iters: 5000,
        tol: 1e-12,
        ..settings
    };
    let oracle = dense_oracle_check(&sub_spec, &sub_theta, &sub_data, &oracle_settings, &mut RngStream::for_domain(measure_seed, domain::POWER_ITERATION, u32::MAX as u64 + 2))?;
    Ok(FlatnessExperiment {
        name: cfg.name.clone(),
        schema_version: SCHEMA_VERSION,
        code_version: CODE_VERSION.to_string(),
        settings,
        measure_seed,
        examples_used: flatness_subset(train, settings.max_examples).len(),
        comparison,
        oracle,
        config: cfg.clone(),
    })
}

/// Per-seed table as CSV.
pub fn flatness_csv(exp: &FlatnessExperiment) -> String {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\narm,seed,top_eigenvalue,converged,power_iterations,diag_mean,diag_max,diag_p95,probe_points\n");
    for row in &exp.comparison.rows {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.arm,
            row.seed,
            r.top_eigenvalue,
            r.converged,
            r.power_iterations,
            r.hessian_diag_summary.mean,
            r.hessian_diag_summary.max,
            r.hessian_diag_summary.p95,
            r.probe_points
        ));
    }
    out
}

/// Train both arms (runs written under `<root>/<name>/{vanilla,leap}/<seed>/`),
/// measure, and write `flatness.json` and `flatness.csv` to `<root>/<name>/`.
pub fn run_flatness(cfg: &ExperimentConfig, root: &Path, measure_seed: u64) -> Result<FlatnessExperiment> {
    cfg.validate()?;
    if !cfg.leap.is_active() {
        return Err(LeapError::config("leap", "the LEAP arm needs enabled = true and sigma > 0"));
    }
    let base = root.join(&cfg.name);
    ensure_writable_dir(&base)?;
    let data = prepare_data(&cfg.data)?;
    let mut arms: Vec<Vec<RunOutcome>> = Vec::new();
    for (arm, leap) in [("vanilla", LeapConfig::disabled()), ("leap", cfg.leap)] {
        let mut arm_cfg = cfg.clone();
        arm_cfg.leap = leap;
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            let outcome = train_on(&arm_cfg, &data, seed)?;
            write_run(&base.join(arm).join(seed.to_string()), &outcome)?;
            if !outcome.report.completed() {
                return Err(LeapError::numeric(format!("{arm} run seed {seed}"), format!("{:?}", outcome.report.status)));
            }
            runs.push(outcome);
        }
        arms.push(runs);
    }
    let exp = measure(cfg, &data.train, &arms[0], &arms[1], measure_seed)?;
    write_atomic(&base.join("flatness.json"), serde_json::to_string_pretty(&exp).expect("report serialises").as_bytes())?;
    write_atomic(&base.join("flatness.csv"), flatness_csv(&exp).as_bytes())?;
    Ok(exp)
}
