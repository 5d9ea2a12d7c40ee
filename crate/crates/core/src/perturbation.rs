//! The LEAP learning-rate sampler.
//!
//! Each batch draws one learning rate per parameter,
//! `h_i = eta + eta * sigma * z_i` with `z_i ~ N(0, 1)` i.i.d., so
//! `h ~ N(eta * 1, eta^2 sigma^2 I)`. Entries are never clamped: a negative
//! learning rate is a legal draw, and clamping would shift `E[h]` above `eta`.
//! [`perturbation_stats`] reports how often that happens.

use serde::{Deserialize, Serialize};

use crate::error::{LeapError, Result};
use crate::rng::RngStream;

/// Perturbation-intensity grid searched for LEAP.
pub const SIGMA_GRID: [f64; 7] = [0.1, 0.05, 0.01, 5e-3, 1e-3, 5e-4, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeapConfig {
    pub sigma: f64,
    /// A `[leap]` table switches perturbation on unless it says otherwise.
    #[serde(default = "enabled_by_default")]
    pub enabled: bool,
}

fn enabled_by_default() -> bool {
    true
}

impl LeapConfig {
    pub fn new(sigma: f64) -> Self {
        LeapConfig {
            sigma,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        LeapConfig {
            sigma: 0.0,
            enabled: false,
        }
    }

    /// True when sampling would actually draw random numbers.
    pub fn is_active(&self) -> bool {
        self.enabled && self.sigma != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(LeapError::config("leap.sigma", format!("must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

impl Default for LeapConfig {
    fn default() -> Self {
        LeapConfig::disabled()
    }
}

/// Per-parameter learning rates for one update.
#[derive(Debug, Clone, PartialEq)]
pub struct LrVector {
    pub values: Vec<f64>,
    pub base_eta: f64,
}

impl LrVector {
    /// Every entry equal to `eta`.
    pub fn constant(eta: f64, m: usize) -> Self {
        LrVector {
            values: vec![eta; m],
            base_eta: eta,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draw `h ~ N(eta * 1, eta^2 sigma^2 I)` of length `m`.
///
/// When LEAP is disabled or `sigma == 0` every entry is exactly `eta` and
/// `rng` is left untouched.
pub fn sample_lr_vector(eta: f64, cfg: &LeapConfig, m: usize, rng: &mut RngStream) -> Result<LrVector> {
    let mut out = LrVector {
        values: vec![0.0; m],
        base_eta: eta,
    };
    fill_lr_vector(eta, cfg, rng, &mut out)?;
    Ok(out)
}

/// In-place variant of [`sample_lr_vector`]; the length of `out` is `m`.
pub fn fill_lr_vector(eta: f64, cfg: &LeapConfig, rng: &mut RngStream, out: &mut LrVector) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(LeapError::config("eta", format!("base learning rate must be finite and > 0, got {eta}")));
    }
    if out.values.is_empty() {
        return Err(LeapError::config("m", "parameter count must be >= 1"));
    }
    cfg.validate()?;
    out.base_eta = eta;
    if !cfg.is_active() {
        out.values.iter_mut().for_each(|v| *v = eta);
        return Ok(());
    }
    let scale = eta * cfg.sigma;
    for v in out.values.iter_mut() {
        *v = eta + scale * rng.standard_normal();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub negative_fraction: f64,
}

/// Pooled moments over every entry of every sample. The variance is the
/// population (1/n) variance.
pub fn perturbation_stats(samples: &[LrVector]) -> Result<PerturbationStats> {
    let total: usize = samples.iter().map(LrVector::len).sum();
    if total == 0 {
        return Err(LeapError::Usage("perturbation_stats needs at least one sampled entry".into()));
    }
    // Welford
    let mut count = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut min = f64::INFINITY;
    let mut negatives = 0usize;
    for &v in samples.iter().flat_map(|s| s.values.iter()) {
        count += 1.0;
        let delta = v - mean;
        mean += delta / count;
        m2 += delta * (v - mean);
        min = min.min(v);
        if v < 0.0 {
            negatives += 1;
        }
    }
    Ok(PerturbationStats {
        mean,
        variance: m2 / count,
        min,
        negative_fraction: negatives as f64 / total as f64,
    })
}
