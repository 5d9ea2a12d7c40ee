//! σ sweeps: every grid value plus a LEAP-disabled cell, crossed with every
//! seed. The best σ is chosen on validation error only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{prepare_data, ExperimentConfig, SweepConfig};
use super::train::{train_on, write_run, RunOutcome};
use super::{ensure_writable_dir, write_atomic, CODE_VERSION, SCHEMA_VERSION};
use crate::error::{LeapError, Result};
use crate::perturbation::LeapConfig;
use crate::stats::{mean, sample_std};

/// One sweep cell: a LEAP setting shared by all seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub leap: LeapConfig,
}

impl SweepCell {
    /// Directory and CSV label, e.g. `sigma-0.01` or `disabled`.
    pub fn label(&self) -> String {
        if self.leap.enabled {
            format!("sigma-{}", self.leap.sigma)
        } else {
            "disabled".to_string()
        }
    }
}

/// Grid cells in configuration order followed by the disabled cell.
pub fn sweep_cells(sweep: &SweepConfig) -> Vec<SweepCell> {
    sweep
        .sigmas
        .iter()
        .map(|&s| SweepCell { leap: LeapConfig::new(s) })
        .chain(std::iter::once(SweepCell { leap: LeapConfig::disabled() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    /// `None` for the disabled cell.
    pub sigma: Option<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_val_error: f64,
    pub std_val_error: f64,
    pub mean_test_error: f64,
    pub std_test_error: f64,
    /// Lowest mean validation error among LEAP cells.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub schema_version: u32,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub best_sigma: Option<f64>,
    pub config: ExperimentConfig,
}

impl SweepReport {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.best)
    }

    pub fn disabled_row(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.sigma.is_none())
    }
}

/// A run of the sweep together with the cell it belongs to.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub cell: SweepCell,
    pub seed: u64,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub runs: Vec<SweepRun>,
}

impl SweepOutcome {
    pub fn runs_for(&self, sigma: Option<f64>) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(move |r| match sigma {
            Some(s) => r.cell.leap.enabled && r.cell.leap.sigma == s,
            None => !r.cell.leap.enabled,
        })
    }
}

/// Mean and sample std over finite values; `NaN` when none.
fn summarize(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        (f64::NAN, f64::NAN)
    } else if finite.len() == 1 {
        (finite[0], 0.0)
    } else {
        (mean(&finite), sample_std(&finite))
    }
}

/// Aggregate per-cell rows and flag the best σ.
pub fn aggregate(cfg: &ExperimentConfig, cells: &[SweepCell], runs: &[SweepRun]) -> SweepReport {
    let mut rows: Vec<SweepRow> = cells
        .iter()
        .map(|cell| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.cell == *cell).collect();
            let ok: Vec<&&SweepRun> = mine.iter().filter(|r| r.outcome.report.completed()).collect();
            let val: Vec<f64> = ok.iter().filter_map(|r| r.outcome.report.final_val_error).collect();
            let test: Vec<f64> = ok.iter().filter_map(|r| r.outcome.report.final_test_error).collect();
            let (mean_val_error, std_val_error) = summarize(&val);
            let (mean_test_error, std_test_error) = summarize(&test);
            SweepRow {
                label: cell.label(),
                sigma: cell.leap.enabled.then_some(cell.leap.sigma),
                n_runs: mine.len(),
                n_failed: mine.len() - ok.len(),
                mean_val_error,
                std_val_error,
                mean_test_error,
                std_test_error,
                best: false,
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.sigma.is_some() && r.mean_val_error.is_finite())
        .fold(None, |acc: Option<(usize, f64)>, (i, r)| match acc {
            Some((_, v)) if v <= r.mean_val_error => acc,
            _ => Some((i, r.mean_val_error)),
        })
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].best = true;
    }
    SweepReport {
        name: cfg.name.clone(),
        schema_version: SCHEMA_VERSION,
        code_version: CODE_VERSION.to_string(),
        seeds: cfg.seeds.clone(),
        best_sigma: best.and_then(|i| rows[i].sigma),
        rows,
        config: cfg.clone(),
    }
}

/// CSV with one row per cell; header only for an empty sweep.
pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = format!(
        "# schema_version={SCHEMA_VERSION}\nlabel,sigma,n_runs,n_failed,mean_val_error,std_val_error,mean_test_error,std_test_error,best\n"
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.sigma.map(|s| s.to_string()).unwrap_or_default(),
            r.n_runs,
            r.n_failed,
            r.mean_val_error,
            r.std_val_error,
            r.mean_test_error,
            r.std_test_error,
            r.best
        ));
    }
    out
}

/// Write `sweep.json` and `sweep.csv` into `dir`.
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    ensure_writable_dir(dir)?;
    write_atomic(&dir.join("sweep.json"), serde_json::to_string_pretty(report).expect("report serialises").as_bytes())?;
    write_atomic(&dir.join("sweep.csv"), sweep_csv(report).as_bytes())
}

/// Run the full (σ grid ∪ {disabled}) × seeds cross product. Each run is
/// written to `<root>/<name>/<cell>/<seed>/`; a run that fails with a
/// numeric fault is recorded and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, root: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| LeapError::config("sweep", "a [sweep] table is required for sweeps"))?;
    let base = root.join(&cfg.name);
    ensure_writable_dir(&base)?;
    let data = prepare_data(&cfg.data)?;
    let cells = sweep_cells(&sweep);
    let mut runs = Vec::with_capacity(cells.len() * cfg.seeds.len());
    for cell in &cells {
        let mut cell_cfg = cfg.clone();
        cell_cfg.leap = cell.leap;
        for &seed in &cfg.seeds {
            let outcome = train_on(&cell_cfg, &data, seed)?;
            write_run(&base.join(cell.label()).join(seed.to_string()), &outcome)?;
            runs.push(SweepRun { cell: *cell, seed, outcome });
        }
    }
    let report = aggregate(cfg, &cells, &runs);
    write_sweep(&base, &report)?;
    Ok(SweepOutcome { report, runs })
}
