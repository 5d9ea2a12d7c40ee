//! The LEAP training loop and per-run artifacts.
//!
//! For each epoch `e` the base rate `eta_e` comes from the schedule; for
//! each batch one learning-rate vector `h` is sampled and the optimizer
//! applies the Hadamard update. Validation error is recorded per epoch and
//! test error once at the end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::config::{prepare_data, ExperimentConfig, PreparedData};
use super::{ensure_writable_dir, write_atomic, CODE_VERSION, SCHEMA_VERSION};
use crate::data::epoch_batch_indices;
use crate::error::{LeapError, Result};
use crate::models::{init_params, loss_and_grad, predict_error_rate, MlpSpec};
use crate::optimizers::LeapOptimizer;
use crate::rng::{domain, mix_seed, RngStream};
use crate::schedules::eval_schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Base learning rate used for every batch of the epoch.
    pub eta: f64,
    /// Size-weighted mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A non-finite loss or gradient appeared.
    Diverged { epoch: u32, batch: usize, detail: String },
    /// The wall-clock limit was hit after `epoch` epochs.
    TimedOut { epoch: u32 },
}

/// Self-describing record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub name: String,
    pub seed: u64,
    pub code_version: String,
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub param_count: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    pub train_checksum: String,
    pub test_checksum: String,
    pub standardized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    /// Present only for completed runs.
    pub final_test_error: Option<f64>,
    pub final_val_error: Option<f64>,
    pub per_epoch: Vec<EpochRecord>,
    pub batches_per_epoch: usize,
    /// Learning-rate vectors sampled; equals epochs × batches for a
    /// completed run.
    pub lr_samples: u64,
    /// Optimizer updates applied.
    pub updates: u64,
    pub metadata: RunMetadata,
    /// Kept out of `report.json` so that file is byte-reproducible; written
    /// to `timing.json` instead.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// A finished run: its report and final parameters.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub theta: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"LEAPCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (all little-endian): 8-byte magic `LEAPCKPT`, `u32`
/// format version (1), `u64` parameter count `M`, then `M` `f64` values in
/// the model's flat layer-major order.
pub fn encode_checkpoint(theta: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * theta.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let parse = |offset: u64, reason: String| LeapError::Parse {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(parse(0, "not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(parse(8, format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[20..];
    if payload.len() != count.saturating_mul(8) {
        return Err(parse(20, format!("expected {count} values, found {} bytes", payload.len())));
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LeapError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Per-epoch CSV: a schema comment line, a header, one row per epoch.
pub fn epochs_csv(report: &RunReport) -> String {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\nepoch,eta,train_loss,val_error\n");
    for r in &report.per_epoch {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.eta, r.train_loss, r.val_error));
    }
    out
}

/// Seed of the shuffle for `epoch` of a run seeded with `seed`.
pub fn epoch_seed(seed: u64, epoch: u32) -> u64 {
    mix_seed(seed, ((domain::SHUFFLE) << 48) | epoch as u64)
}

/// Run directory `<root>/<name>/<seed>`.
pub fn run_dir(root: &Path, name: &str, seed: u64) -> PathBuf {
    root.join(name).join(seed.to_string())
}

/// Execute one run on prepared data; nothing is written to disk.
pub fn train_on(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let spec: MlpSpec = cfg.model.resolve()?;
    if data.train.dim() != spec.input_dim() {
        return Err(LeapError::config(
            "model",
            format!("data has {} features but the model expects {}", data.train.dim(), spec.input_dim()),
        ));
    }
    let m = spec.param_count();
    let mut theta = init_params(&spec, &mut RngStream::for_domain(seed, domain::INIT, 0))?.values;
    let mut opt = LeapOptimizer::new(cfg.optimizer, cfg.leap, m)?;
    let mut leap_rng = RngStream::for_domain(seed, domain::LEAP, 0);
    let n = data.train.len();
    let batch_size = cfg.data.batch_size;
    let batches_per_epoch = n.div_ceil(batch_size);
    let mut per_epoch = Vec::with_capacity(cfg.epochs as usize);
    let mut status = RunStatus::Completed;
    let mut updates = 0u64;

    'epochs: for epoch in 1..=cfg.epochs {
        let eta = eval_schedule(&cfg.schedule, epoch)?;
        let mut loss_sum = 0.0;
        for (b, idx) in epoch_batch_indices(n, batch_size, epoch_seed(seed, epoch))?.into_iter().enumerate() {
            let inputs = data.train.inputs.select(Axis(0), &idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let step = loss_and_grad(&spec, &theta, inputs.view(), &labels).and_then(|(loss, grad)| {
                if !loss.is_finite() {
                    return Err(LeapError::numeric("loss", format!("{loss}")));
                }
                opt.step(&mut theta, &grad, eta, &mut leap_rng)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => loss_sum += loss * idx.len() as f64,
                Err(e @ LeapError::Numeric { .. }) => {
                    status = RunStatus::Diverged {
                        epoch,
                        batch: b,
                        detail: e.to_string(),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            updates += 1;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            status = RunStatus::Diverged {
                epoch,
                batch: batches_per_epoch - 1,
                detail: "non-finite parameters after update".into(),
            };
            break;
        }
        let val_error = if data.val.is_empty() { f64::NAN } else { predict_error_rate(&spec, &theta, &data.val)? };
        per_epoch.push(EpochRecord {
            epoch,
            eta,
            train_loss: loss_sum / n as f64,
            val_error,
        });
        if let Some(limit) = cfg.wall_clock_limit_s {
            if start.elapsed().as_secs_f64() > limit && epoch < cfg.epochs {
                status = RunStatus::TimedOut { epoch };
                break;
            }
        }
    }

    let completed = status == RunStatus::Completed;
    let final_test_error = if completed { Some(predict_error_rate(&spec, &theta, &data.test)?) } else { None };
    let report = RunReport {
        status,
        final_test_error,
        final_val_error: if completed { per_epoch.last().map(|r| r.val_error) } else { None },
        per_epoch,
        batches_per_epoch,
        lr_samples: opt.samples_drawn(),
        updates,
        metadata: RunMetadata {
            name: cfg.name.clone(),
            seed,
            code_version: CODE_VERSION.to_string(),
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            param_count: m,
            train_examples: data.train.len(),
            val_examples: data.val.len(),
            test_examples: data.test.len(),
            train_checksum: data.train.checksum.clone(),
            test_checksum: data.test.checksum.clone(),
            standardized: data.standardized,
        },
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { report, theta })
}

/// Persist `report.json`, `epochs.csv`, `checkpoint.bin` and `timing.json`
/// into `dir`, each written atomically.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    ensure_writable_dir(dir)?;
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serialises");
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    write_atomic(&dir.join("epochs.csv"), epochs_csv(&outcome.report).as_bytes())?;
    write_atomic(&dir.join("checkpoint.bin"), &encode_checkpoint(&outcome.theta))?;
    let timing = serde_json::json!({ "wall_time_s": outcome.report.wall_time_s });
    write_atomic(&dir.join("timing.json"), timing.to_string().as_bytes())?;
    Ok(())
}

/// Load the data, train every configured seed and write each run under
/// `<root>/<name>/<seed>/`. The output root is checked for writability
/// before any computation.
pub fn run_training(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    ensure_writable_dir(&root.join(&cfg.name))?;
    let data = prepare_data(&cfg.data)?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            let outcome = train_on(cfg, &data, seed)?;
            write_run(&run_dir(root, &cfg.name, seed), &outcome)?;
            Ok(outcome)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::tests::BLOBS_TOML;
    use crate::perturbation::LeapConfig;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(BLOBS_TOML).unwrap()
    }

    #[test]
    fn one_lr_sample_per_batch() {
        let cfg = cfg();
        let data = prepare_data(&cfg.data).unwrap();
        let out = train_on(&cfg, &data, 3).unwrap();
        assert!(out.report.completed());
        assert_eq!(out.report.batches_per_epoch, 96usize.div_ceil(16));
        assert_eq!(out.report.lr_samples, cfg.epochs as u64 * out.report.batches_per_epoch as u64);
        assert_eq!(out.report.updates, out.report.lr_samples);
        assert_eq!(out.report.per_epoch.len(), cfg.epochs as usize);
        assert!(out.report.per_epoch.iter().all(|r| r.eta == 0.1));
    }

    #[test]
    fn zero_sigma_matches_disabled_bitwise() {
        let mut a = cfg();
        a.leap = LeapConfig::new(0.0);
        let mut b = cfg();
        b.leap = LeapConfig::disabled();
        let data = prepare_data(&a.data).unwrap();
        let ra = train_on(&a, &data, 5).unwrap();
        let rb = train_on(&b, &data, 5).unwrap();
        assert_eq!(ra.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), rb.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ra.report.per_epoch, rb.report.per_epoch);
        assert_eq!(ra.report.final_test_error, rb.report.final_test_error);
    }

    #[test]
    fn loss_decreases_across_a_small_epoch() {
        let mut cfg = cfg();
        cfg.epochs = 1;
        cfg.leap = LeapConfig::disabled();
        cfg.data.batch_size = 8;
        cfg.optimizer = crate::optimizers::OptimizerConfig::plain_sgd();
        let data = prepare_data(&cfg.data).unwrap();
        let spec = cfg.model.resolve().unwrap();
        let before = loss_and_grad(&spec, &init_params(&spec, &mut RngStream::for_domain(9, domain::INIT, 0)).unwrap().values, data.train.inputs.view(), &data.train.labels).unwrap().0;
        let out = train_on(&cfg, &data, 9).unwrap();
        let after = loss_and_grad(&spec, &out.theta, data.train.inputs.view(), &data.train.labels).unwrap().0;
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let mut cfg = cfg();
        cfg.schedule = crate::schedules::ScheduleSpec::Constant { eta0: 1e200 };
        cfg.optimizer = crate::optimizers::OptimizerConfig::plain_sgd();
        let data = prepare_data(&cfg.data).unwrap();
        let out = train_on(&cfg, &data, 1).unwrap();
        assert!(matches!(out.report.status, RunStatus::Diverged { epoch: 1, .. }), "{:?}", out.report.status);
        assert!(out.report.final_test_error.is_none());
    }

    #[test]
    fn artifacts_round_trip_and_are_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = cfg();
        let first = run_training(&cfg, tmp.path()).unwrap();
        let dir = run_dir(tmp.path(), "tiny", 1);
        let report1 = std::fs::read(dir.join("report.json")).unwrap();
        let csv1 = std::fs::read_to_string(dir.join("epochs.csv")).unwrap();
        assert_eq!(csv1.lines().count(), 2 + cfg.epochs as usize);
        assert_eq!(read_checkpoint(dir.join("checkpoint.bin")).unwrap(), first[0].theta);
        let parsed: RunReport = serde_json::from_slice(&report1).unwrap();
        assert_eq!(parsed.per_epoch, first[0].report.per_epoch);
        run_training(&cfg, tmp.path()).unwrap();
        assert_eq!(std::fs::read(dir.join("report.json")).unwrap(), report1);
        assert_eq!(std::fs::read_to_string(dir.join("epochs.csv")).unwrap(), csv1);
    }

    #[test]
    fn checkpoint_errors_carry_offsets() {
        let p = Path::new("x.bin");
        assert!(matches!(decode_checkpoint(b"nope", p), Err(LeapError::Parse { offset: 0, .. })));
        let mut bytes = encode_checkpoint(&[1.0, 2.0]);
        bytes.pop();
        assert!(matches!(decode_checkpoint(&bytes, p), Err(LeapError::Parse { offset: 20, .. })));
        assert_eq!(decode_checkpoint(&encode_checkpoint(&[1.5, -0.0]), p).unwrap(), vec![1.5, -0.0]);
    }
}
