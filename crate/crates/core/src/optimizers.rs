//! SGD-with-momentum and Adam steps driven by a per-parameter learning-rate
//! vector.
//!
//! The LEAP update is the Hadamard product `theta -= h ∘ direction`. With a
//! constant `h` every step here is the textbook scalar-learning-rate step.
//! Weight decay is coupled (added to the gradient). No gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{LeapError, Result};
use crate::perturbation::{fill_lr_vector, LeapConfig, LrVector};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Where the per-parameter rates enter an Adam step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeapAdamMode {
    /// `theta_i -= h_i * m_hat_i / (sqrt(v_hat_i) + eps)`.
    #[default]
    ScaleFinalStep,
    /// `theta_i -= h_i * c_t * m_i / (sqrt(v_i) + eps)` with the bias
    /// correction folded into the scalar `c_t = sqrt(1 - beta2^t) / (1 - beta1^t)`.
    ScaleUncorrectedStep,
}

impl LeapAdamMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LeapAdamMode::ScaleFinalStep => "scale_final_step",
            LeapAdamMode::ScaleUncorrectedStep => "scale_uncorrected_step",
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// SGD momentum coefficient.
    #[serde(rename = "momentum", default = "default_momentum")]
    pub momentum_beta: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub leap_adam_mode: LeapAdamMode,
}

impl OptimizerConfig {
    /// Plain SGD, no momentum, no weight decay.
    pub fn plain_sgd() -> Self {
        OptimizerConfig {
            momentum_beta: 0.0,
            ..OptimizerConfig::sgd_momentum(0.0)
        }
    }

    pub fn sgd_momentum(momentum_beta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            momentum_beta,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
            leap_adam_mode: LeapAdamMode::default(),
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::sgd_momentum(default_momentum())
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.momentum_beta) {
            return Err(LeapError::config("optimizer.momentum", format!("must lie in [0, 1), got {}", self.momentum_beta)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(LeapError::config("optimizer.weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        if self.kind == OptimizerKind::Adam {
            if !unit(self.beta1) {
                return Err(LeapError::config("optimizer.beta1", format!("must lie in [0, 1), got {}", self.beta1)));
            }
            if !unit(self.beta2) {
                return Err(LeapError::config("optimizer.beta2", format!("must lie in [0, 1), got {}", self.beta2)));
            }
            if !(self.epsilon > 0.0) {
                return Err(LeapError::config("optimizer.epsilon", format!("must be > 0, got {}", self.epsilon)));
            }
        }
        Ok(())
    }
}

/// Momentum and moment buffers, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(m: usize) -> Self {
        OptimizerState {
            velocity: vec![0.0; m],
            m1: vec![0.0; m],
            m2: vec![0.0; m],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }
}

fn check_step_args(theta: &[f64], grad: &[f64], h: &LrVector, state: &OptimizerState) -> Result<()> {
    let m = theta.len();
    if grad.len() != m || h.len() != m || state.len() != m {
        return Err(LeapError::Contract(format!(
            "length mismatch: theta {m}, grad {}, h {}, state {}",
            grad.len(),
            h.len(),
            state.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(LeapError::numeric(format!("gradient index {i}"), format!("non-finite value {}", grad[i])));
    }
    Ok(())
}

/// `theta -= h ∘ v` with `v = beta * v + (grad + wd * theta)`; when
/// `beta == 0` this is `theta -= h ∘ (grad + wd * theta)`.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], h: &LrVector, state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<()> {
    check_step_args(theta, grad, h, state)?;
    let beta = cfg.momentum_beta;
    let wd = cfg.weight_decay;
    for i in 0..theta.len() {
        let g = if wd != 0.0 { grad[i] + wd * theta[i] } else { grad[i] };
        let d = if beta != 0.0 {
            let v = beta * state.velocity[i] + g;
            state.velocity[i] = v;
            v
        } else {
            g
        };
        theta[i] -= h.values[i] * d;
    }
    state.step_count += 1;
    Ok(())
}

/// Adam with bias correction; `h` scales the preconditioned step per
/// parameter according to `cfg.leap_adam_mode`.
pub fn adam_step(theta: &mut [f64], grad: &[f64], h: &LrVector, state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<()> {
    check_step_args(theta, grad, h, state)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..theta.len() {
        let g = if wd != 0.0 { grad[i] + wd * theta[i] } else { grad[i] };
        let m1 = b1 * state.m1[i] + (1.0 - b1) * g;
        let m2 = b2 * state.m2[i] + (1.0 - b2) * g * g;
        state.m1[i] = m1;
        state.m2[i] = m2;
        let dir = match cfg.leap_adam_mode {
            LeapAdamMode::ScaleFinalStep => (m1 / c1) / ((m2 / c2).sqrt() + eps),
            LeapAdamMode::ScaleUncorrectedStep => (c2.sqrt() / c1) * m1 / (m2.sqrt() + eps),
        };
        theta[i] -= h.values[i] * dir;
    }
    Ok(())
}

/// Dispatch on `cfg.kind`.
pub fn apply_step(theta: &mut [f64], grad: &[f64], h: &LrVector, state: &mut OptimizerState, cfg: &OptimizerConfig) -> Result<()> {
    match cfg.kind {
        OptimizerKind::Sgd => sgd_step(theta, grad, h, state, cfg),
        OptimizerKind::Adam => adam_step(theta, grad, h, state, cfg),
    }
}

/// An optimizer wrapped with the LEAP sampler. Each [`LeapOptimizer::step`]
/// draws exactly one learning-rate vector.
#[derive(Debug, Clone)]
pub struct LeapOptimizer {
    pub cfg: OptimizerConfig,
    pub leap: LeapConfig,
    pub state: OptimizerState,
    h: LrVector,
    samples_drawn: u64,
}

impl LeapOptimizer {
    pub fn new(cfg: OptimizerConfig, leap: LeapConfig, m: usize) -> Result<Self> {
        cfg.validate()?;
        leap.validate()?;
        if m == 0 {
            return Err(LeapError::config("m", "parameter count must be >= 1"));
        }
        Ok(LeapOptimizer {
            cfg,
            leap,
            state: OptimizerState::new(m),
            h: LrVector::constant(0.0, m),
            samples_drawn: 0,
        })
    }

    /// One update at base learning rate `eta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], eta: f64, rng: &mut RngStream) -> Result<()> {
        fill_lr_vector(eta, &self.leap, rng, &mut self.h)?;
        self.samples_drawn += 1;
        apply_step(theta, grad, &self.h, &mut self.state, &self.cfg)
    }

    /// Number of learning-rate vectors drawn so far.
    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    /// The learning-rate vector used by the most recent step.
    pub fn last_lr_vector(&self) -> &LrVector {
        &self.h
    }
}

/// Sample `h` around `schedule_eta`, then apply one optimizer step.
pub fn leap_step(
    theta: &mut [f64],
    grad: &[f64],
    schedule_eta: f64,
    leap_cfg: &LeapConfig,
    state: &mut OptimizerState,
    opt_cfg: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<LrVector> {
    let mut h = LrVector::constant(schedule_eta, theta.len());
    fill_lr_vector(schedule_eta, leap_cfg, rng, &mut h)?;
    apply_step(theta, grad, &h, state, opt_cfg)?;
    Ok(h)
}
