//! Declarative experiment configuration (TOML). Every table rejects unknown
//! keys, and `validate` runs every sub-config's own checks before any work
//! starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_idx, split_train_val, synth_blobs, Dataset, SplitSpec};
use crate::error::{LeapError, Result};
use crate::escape::NoiseModel;
use crate::flatness::FlatnessSettings;
use crate::landscapes::LandscapeSpec;
use crate::models::{MlpSpec, DEFAULT_INIT_GAIN};
use crate::optimizers::OptimizerConfig;
use crate::perturbation::{LeapConfig, SIGMA_GRID};
use crate::rng::mix_seed;
use crate::schedules::ScheduleSpec;

/// Either a named architecture (`arch = "mlp-3"`) or explicit `layer_dims`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_dims: Option<Vec<usize>>,
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_init_gain() -> f64 {
    DEFAULT_INIT_GAIN
}

impl ModelConfig {
    pub fn named(arch: &str) -> Self {
        ModelConfig {
            arch: Some(arch.to_string()),
            layer_dims: None,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    pub fn resolve(&self) -> Result<MlpSpec> {
        let mut spec = match (&self.arch, &self.layer_dims) {
            (Some(name), None) => {
                MlpSpec::named(name).ok_or_else(|| LeapError::config("model.arch", format!("unknown architecture `{name}`")))?
            }
            (None, Some(dims)) => MlpSpec::new(dims),
            _ => return Err(LeapError::config("model", "set exactly one of `arch` or `layer_dims`")),
        };
        spec.init_gain = self.init_gain;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// IDX files under `path`: `train-images-idx3-ubyte`,
    /// `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte` and
    /// `t10k-labels-idx1-ubyte`, each optionally with a `.gz` suffix.
    Mnist,
    /// Gaussian blobs; the test set is drawn independently.
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Standardize features with training-set moments.
    #[serde(default)]
    pub standardize: bool,
    /// Training examples; defaults to everything not used for validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_n: Option<usize>,
    /// Validation examples; defaults to 10,000 for MNIST and a fifth of
    /// the pool for blobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_n: Option<usize>,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_test_n_per_class")]
    pub test_n_per_class: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_blob_dim")]
    pub dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub blobs_seed: u64,
}

fn default_batch_size() -> usize {
    128
}
fn default_n_per_class() -> usize {
    500
}
fn default_test_n_per_class() -> usize {
    200
}
fn default_num_classes() -> usize {
    10
}
fn default_blob_dim() -> usize {
    784
}
fn default_separation() -> f64 {
    4.0
}

impl DataConfig {
    pub fn blobs() -> Self {
        DataConfig {
            kind: DataKind::Blobs,
            path: None,
            split_seed: 0,
            batch_size: default_batch_size(),
            standardize: false,
            train_n: None,
            val_n: None,
            n_per_class: default_n_per_class(),
            test_n_per_class: default_test_n_per_class(),
            num_classes: default_num_classes(),
            dim: default_blob_dim(),
            separation: default_separation(),
            blobs_seed: 0,
        }
    }

    pub fn mnist(path: impl Into<PathBuf>) -> Self {
        DataConfig {
            kind: DataKind::Mnist,
            path: Some(path.into()),
            ..DataConfig::blobs()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LeapError::config("data.batch_size", "must be >= 1"));
        }
        match self.kind {
            DataKind::Mnist => {
                if self.path.is_none() {
                    return Err(LeapError::config("data.path", "required for kind = \"mnist\""));
                }
            }
            DataKind::Blobs => {
                if self.n_per_class == 0 || self.test_n_per_class == 0 || self.num_classes < 2 || self.dim == 0 {
                    return Err(LeapError::config("data", "blobs need n_per_class, test_n_per_class, dim >= 1 and num_classes >= 2"));
                }
                if !(self.separation.is_finite() && self.separation > 0.0) {
                    return Err(LeapError::config("data.separation", "must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Train, validation and test sets ready for a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub standardized: bool,
}

fn idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(LeapError::io(
        plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (also tried .gz)"),
    ))
}

/// Load or synthesise the data and split off the validation set.
pub fn prepare_data(cfg: &DataConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let (pool, test) = match cfg.kind {
        DataKind::Mnist => {
            let dir = cfg.path.as_deref().expect("validated");
            let train = load_mnist_idx(idx_file(dir, "train-images-idx3-ubyte")?, idx_file(dir, "train-labels-idx1-ubyte")?)?;
            let test = load_mnist_idx(idx_file(dir, "t10k-images-idx3-ubyte")?, idx_file(dir, "t10k-labels-idx1-ubyte")?)?;
            (train, test)
        }
        DataKind::Blobs => {
            let pool = synth_blobs(cfg.n_per_class, cfg.num_classes, cfg.dim, cfg.separation, cfg.blobs_seed)?;
            let test = synth_blobs(cfg.test_n_per_class, cfg.num_classes, cfg.dim, cfg.separation, mix_seed(cfg.blobs_seed, 1))?;
            (pool, test)
        }
    };
    let val_n = cfg.val_n.unwrap_or(match cfg.kind {
        DataKind::Mnist => 10_000.min(pool.len() / 6),
        DataKind::Blobs => pool.len() / 5,
    });
    let train_n = match cfg.train_n {
        Some(n) => n,
        None => pool.len().checked_sub(val_n).ok_or_else(|| {
            LeapError::config("data.val_n", format!("{val_n} exceeds the {} available examples", pool.len()))
        })?,
    };
    let (mut train, mut val) = split_train_val(
        &pool,
        &SplitSpec {
            train_n,
            val_n,
            seed: cfg.split_seed,
        },
    )?;
    let mut test = test;
    if cfg.standardize {
        let (mean, std) = train.feature_moments();
        train.standardize_with(&mean, &std);
        val.standardize_with(&mean, &std);
        test.standardize_with(&mean, &std);
    }
    Ok(PreparedData {
        train,
        val,
        test,
        standardized: cfg.standardize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
}

fn default_sigmas() -> Vec<f64> {
    SIGMA_GRID.to_vec()
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { sigmas: default_sigmas() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

/// Configuration of `train`, `sweep` and `flatness` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub epochs: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Runs exceeding this many seconds stop after the current epoch and are
    /// marked timed out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_limit_s: Option<f64>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub schedule: ScheduleSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub leap: LeapConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flatness: Option<FlatnessSettings>,
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && name != "." && name != "..";
    if ok {
        Ok(())
    } else {
        Err(LeapError::config("name", format!("`{name}` must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        if self.epochs == 0 {
            return Err(LeapError::config("epochs", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(LeapError::config("seeds", "need at least one seed"));
        }
        if let Some(limit) = self.wall_clock_limit_s {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(LeapError::config("wall_clock_limit_s", "must be > 0"));
            }
        }
        let spec = self.model.resolve()?;
        self.data.validate()?;
        if self.data.kind == DataKind::Blobs && self.data.dim != spec.input_dim() {
            return Err(LeapError::config(
                "data.dim",
                format!("blobs have {} features but the model expects {}", self.data.dim, spec.input_dim()),
            ));
        }
        if self.data.kind == DataKind::Blobs && self.data.num_classes != spec.num_classes() {
            return Err(LeapError::config(
                "data.num_classes",
                format!("blobs have {} classes but the model has {} outputs", self.data.num_classes, spec.num_classes()),
            ));
        }
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.leap.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.sigmas.is_empty() {
                return Err(LeapError::config("sweep.sigmas", "grid must be non-empty"));
            }
            for &s in &sweep.sigmas {
                LeapConfig::new(s).validate().map_err(|_| LeapError::config("sweep.sigmas", format!("invalid sigma {s}")))?;
            }
        }
        if let Some(f) = &self.flatness {
            f.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LeapError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&read_config(path.as_ref())?)
    }
}

pub(crate) fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| LeapError::io(path, e))
}

/// What an `escape` run does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EscapeMode {
    /// Escape-time sweep from one catalogued minimum plus the log-linear fit.
    Sweep {
        #[serde(default)]
        basin: usize,
        /// `[eta, sigma]` pairs.
        grid: Vec<[f64; 2]>,
        trials_per_point: u64,
        max_steps: u64,
    },
    /// Basin occupation from uniform starts (two-basin 1-D landscapes).
    Selection {
        eta: f64,
        sigma: f64,
        runs: u64,
        steps: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_interval: Option<[f64; 2]>,
    },
}

/// Configuration of the `escape` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeConfig {
    pub name: String,
    #[serde(default = "default_escape_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub noise_model: NoiseModel,
    #[serde(default)]
    pub gradient_noise_std: f64,
    pub landscape: LandscapeSpec,
    pub escape: EscapeMode,
}

fn default_escape_seed() -> u64 {
    0
}

impl EscapeConfig {
    pub fn validate(&self) -> Result<()> {
        check_name(&self.name)?;
        let cl = self.landscape.build()?;
        if !(self.gradient_noise_std.is_finite() && self.gradient_noise_std >= 0.0) {
            return Err(LeapError::config("gradient_noise_std", "must be >= 0"));
        }
        match &self.escape {
            EscapeMode::Sweep {
                basin,
                grid,
                trials_per_point,
                max_steps,
            } => {
                if *basin >= cl.catalog.len() {
                    return Err(LeapError::config("escape.basin", format!("catalog has {} entries", cl.catalog.len())));
                }
                if grid.is_empty() {
                    return Err(LeapError::config("escape.grid", "grid must be non-empty"));
                }
                if let Some([e, s]) = grid.iter().find(|[e, s]| !(e.is_finite() && *e > 0.0 && s.is_finite() && *s > 0.0)) {
                    return Err(LeapError::config("escape.grid", format!("invalid point [{e}, {s}]")));
                }
                if *trials_per_point == 0 || *max_steps == 0 {
                    return Err(LeapError::config("escape", "trials_per_point and max_steps must be >= 1"));
                }
            }
            EscapeMode::Selection { eta, sigma, runs, steps, .. } => {
                if !(eta.is_finite() && *eta > 0.0 && sigma.is_finite() && *sigma >= 0.0) {
                    return Err(LeapError::config("escape", "need eta > 0 and sigma >= 0"));
                }
                if *runs == 0 || *steps == 0 {
                    return Err(LeapError::config("escape", "runs and steps must be >= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: EscapeConfig = toml::from_str(text).map_err(|e| LeapError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&read_config(path.as_ref())?)
    }
}
