//! The `escape` experiment: a sweep with its fit, or a minima-selection run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{EscapeConfig, EscapeMode};
use super::{ensure_writable_dir, write_atomic, CODE_VERSION, SCHEMA_VERSION};
use crate::error::Result;
use crate::escape::{fit_points, minima_selection_experiment, points_to_csv, records_to_csv, sweep_points, Dynamics, EscapeSettings, MinimaSelection, SweepPoint, Theorem1Fit};

#[derive(Debug, Clone, Serialize)]
pub struct EscapeRunReport<T: Serialize> {
    pub name: String,
    pub seed: u64,
    pub schema_version: u32,
    pub code_version: String,
    pub config: EscapeConfig,
    pub result: T,
}

#[derive(Debug, Clone)]
pub enum EscapeOutcome {
    Sweep {
        points: Vec<SweepPoint>,
        /// `Err` carries the fit failure message (too few valid points).
        fit: std::result::Result<Theorem1Fit, String>,
    },
    Selection(MinimaSelection),
}

/// Directory of an escape run: `<root>/<name>/<seed>`.
pub fn escape_dir(root: &Path, cfg: &EscapeConfig) -> PathBuf {
    root.join(&cfg.name).join(cfg.seed.to_string())
}

/// Run the configured experiment and write its artifacts.
///
/// Sweeps write `records_<k>.csv` (one row per trial of grid point `k`),
/// `points.csv` and `fit.json`. When fewer than four points are valid the
/// records and points are still written and the fit error is returned in
/// the outcome. Selection runs write `selection.json`.
pub fn run_escape(cfg: &EscapeConfig, root: &Path) -> Result<EscapeOutcome> {
    cfg.validate()?;
    let dir = escape_dir(root, cfg);
    ensure_writable_dir(&dir)?;
    let cl = cfg.landscape.build()?;
    let dynamics = Dynamics {
        noise_model: cfg.noise_model,
        gradient_noise_std: cfg.gradient_noise_std,
    };
    let wrap = |result| EscapeRunReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        schema_version: SCHEMA_VERSION,
        code_version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        result,
    };
    match &cfg.escape {
        EscapeMode::Sweep {
            basin,
            grid,
            trials_per_point,
            max_steps,
        } => {
            let grid: Vec<(f64, f64)> = grid.iter().map(|&[e, s]| (e, s)).collect();
            let entry = &cl.catalog[*basin];
            let (points, records) = sweep_points(&cl.landscape, entry, &grid, *trials_per_point, *max_steps, dynamics, cfg.seed)?;
            for (k, recs) in records.iter().enumerate() {
                write_atomic(&dir.join(format!("records_{k}.csv")), records_to_csv(recs).as_bytes())?;
            }
            write_atomic(&dir.join("points.csv"), points_to_csv(&points).as_bytes())?;
            let fit = fit_points(entry, points.clone()).map_err(|e| e.to_string());
            let body = match &fit {
                Ok(f) => serde_json::to_string_pretty(&wrap(serde_json::json!({ "fit": f }))),
                Err(msg) => serde_json::to_string_pretty(&wrap(serde_json::json!({ "fit_error": msg, "points": points }))),
            }
            .expect("fit serialises");
            write_atomic(&dir.join("fit.json"), body.as_bytes())?;
            Ok(EscapeOutcome::Sweep { points, fit })
        }
        EscapeMode::Selection {
            eta,
            sigma,
            runs,
            steps,
            init_interval,
        } => {
            let settings = EscapeSettings::new(*eta, *sigma, *steps).with_dynamics(dynamics);
            let sel = minima_selection_experiment(&cl, &settings, *runs, init_interval.map(|[a, b]| (a, b)), cfg.seed)?;
            let body = serde_json::to_string_pretty(&wrap(serde_json::to_value(&sel).expect("selection serialises"))).expect("selection serialises");
            write_atomic(&dir.join("selection.json"), body.as_bytes())?;
            Ok(EscapeOutcome::Selection(sel))
        }
    }
}
