//! Experiment orchestration: configuration, the training loop, σ sweeps,
//! escape and flatness experiments, and artifact emission.
//!
//! Every artifact is a pure function of (config, seed). Wall-clock time is
//! the one exception and lives in `timing.json`, apart from the reports.

pub mod config;
pub mod escape_run;
pub mod flatness_run;
pub mod report;
pub mod sweep;
pub mod train;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{LeapError, Result};

pub use config::{prepare_data, DataConfig, DataKind, EscapeConfig, EscapeMode, ExperimentConfig, ModelConfig, PreparedData, SweepConfig};
pub use escape_run::{run_escape, EscapeOutcome};
pub use flatness_run::{run_flatness, FlatnessExperiment};
pub use report::emit_report;
pub use sweep::{run_sweep, SweepOutcome, SweepReport};
pub use train::{read_checkpoint, run_training, train_on, RunOutcome, RunReport, RunStatus};

/// Version of the CSV/JSON layouts written by the harness.
pub const SCHEMA_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Overrides the config's `output_dir` (but not an explicit CLI flag).
pub const OUTPUT_ROOT_ENV: &str = "LEAP_OUTPUT_ROOT";

/// Output root by precedence: explicit flag, then [`OUTPUT_ROOT_ENV`], then
/// the config value.
pub fn resolve_output_root(flag: Option<&Path>, config_dir: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config_dir.to_path_buf(),
    }
}

/// Create `dir` if needed and prove it is writable.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LeapError::io(dir, e))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(|e| LeapError::io(dir, e))?;
    std::fs::remove_file(&probe).map_err(|e| LeapError::io(&probe, e))
}

/// Write via a temporary sibling and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| LeapError::io(parent, e))?;
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = std::fs::File::create(&tmp).map_err(|e| LeapError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| LeapError::io(&tmp, e))?;
    f.sync_all().map_err(|e| LeapError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LeapError::io(path, e))
}
