//! Re-emission of plot-ready CSV/JSON from persisted run artifacts.
//!
//! `emit_report` only reads `report.json`/`sweep.json` files, so repeated
//! emission of the same artifacts yields byte-identical outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweep::{sweep_csv, SweepReport};
use super::train::{epochs_csv, RunReport, RunStatus};
use super::{write_atomic, SCHEMA_VERSION};
use crate::error::{LeapError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummaryRow {
    /// Sub-directory grouping (sweep cell or flatness arm); empty for plain
    /// training runs.
    pub group: String,
    pub seed: u64,
    pub status: String,
    pub epochs_completed: usize,
    pub final_val_error: Option<f64>,
    pub final_test_error: Option<f64>,
}

fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Diverged { .. } => "diverged",
        RunStatus::TimedOut { .. } => "timed_out",
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| LeapError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| LeapError::Parse {
        path: path.to_path_buf(),
        offset: e.column() as u64,
        reason: e.to_string(),
    })
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| LeapError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Every `report.json` at depth one (`<seed>/`) or two (`<group>/<seed>/`).
pub fn collect_run_reports(base: &Path) -> Result<Vec<(String, PathBuf, RunReport)>> {
    let mut found: Vec<(String, PathBuf, RunReport)> = Vec::new();
    for dir in sorted_subdirs(base)? {
        let file = dir.join("report.json");
        if file.exists() {
            found.push((String::new(), dir.clone(), read_json(&file)?));
            continue;
        }
        let group = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for sub in sorted_subdirs(&dir)? {
            let file = sub.join("report.json");
            if file.exists() {
                found.push((group.clone(), sub.clone(), read_json(&file)?));
            }
        }
    }
    found.sort_by(|a, b| (&a.0, a.2.metadata.seed).cmp(&(&b.0, b.2.metadata.seed)));
    Ok(found)
}

pub fn runs_csv(rows: &[RunSummaryRow]) -> String {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\ngroup,seed,status,epochs_completed,final_val_error,final_test_error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.group,
            r.seed,
            r.status,
            r.epochs_completed,
            opt(r.final_val_error),
            opt(r.final_test_error)
        ));
    }
    out
}

/// Regenerate per-run `epochs.csv`, a `runs.csv`/`runs.json` summary and,
/// for sweeps, `sweep.csv` under `<root>/<name>/`. Returns the files written.
pub fn emit_report(root: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let base = root.join(name);
    if !base.is_dir() {
        return Err(LeapError::io(
            &base,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no artifacts for this experiment; run it first"),
        ));
    }
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for (group, dir, report) in collect_run_reports(&base)? {
        let path = dir.join("epochs.csv");
        write_atomic(&path, epochs_csv(&report).as_bytes())?;
        written.push(path);
        rows.push(RunSummaryRow {
            group,
            seed: report.metadata.seed,
            status: status_name(&report.status).to_string(),
            epochs_completed: report.per_epoch.len(),
            final_val_error: report.final_val_error,
            final_test_error: report.final_test_error,
        });
    }
    let path = base.join("runs.csv");
    write_atomic(&path, runs_csv(&rows).as_bytes())?;
    written.push(path);
    let path = base.join("runs.json");
    let json = serde_json::json!({ "schema_version": SCHEMA_VERSION, "runs": rows });
    write_atomic(&path, serde_json::to_string_pretty(&json).expect("rows serialise").as_bytes())?;
    written.push(path);
    let sweep_json = base.join("sweep.json");
    if sweep_json.exists() {
        let sweep: SweepReport = read_json(&sweep_json)?;
        let path = base.join("sweep.csv");
        write_atomic(&path, sweep_csv(&sweep).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
