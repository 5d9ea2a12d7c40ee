//! Epoch-indexed learning-rate schedules.
//!
//! Epochs are 1-indexed and the schedule is evaluated once per epoch; every
//! batch inside an epoch sees the same base learning rate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LeapError, Result};

/// Default step-decay factor used by [`ScheduleSpec::step_decay`].
pub const DEFAULT_STEP_GAMMA: f64 = 0.1;
/// Default step-decay interval (epochs) used by [`ScheduleSpec::step_decay`].
pub const DEFAULT_STEP_SIZE: u32 = 30;

/// Declarative learning-rate schedule.
///
/// In config files this is a `schedule` table with a `kind` key plus the
/// keys of that kind. Step-decay parameters have no serde defaults, so every
/// config states them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// The same learning rate at every epoch.
    Constant { eta0: f64 },
    /// `eta0 * gamma^floor((epoch - 1) / step_size)`.
    StepDecay { eta0: f64, gamma: f64, step_size: u32 },
    /// Cosine annealing with warm restarts; cycle lengths `t0, t0*t_mult, ...`.
    CosineWarmRestart {
        eta0: f64,
        eta_min: f64,
        t0: u32,
        t_mult: u32,
    },
}

impl ScheduleSpec {
    /// Step decay with the default `gamma = 0.1`, `step_size = 30`.
    pub fn step_decay(eta0: f64) -> Self {
        ScheduleSpec::StepDecay {
            eta0,
            gamma: DEFAULT_STEP_GAMMA,
            step_size: DEFAULT_STEP_SIZE,
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            ScheduleSpec::Constant { eta0 }
            | ScheduleSpec::StepDecay { eta0, .. }
            | ScheduleSpec::CosineWarmRestart { eta0, .. } => eta0,
        }
    }

    /// Short name of the schedule family, as written in config files.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ScheduleSpec::Constant { .. } => "constant",
            ScheduleSpec::StepDecay { .. } => "step_decay",
            ScheduleSpec::CosineWarmRestart { .. } => "cosine_warm_restart",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta0 = self.eta0();
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(LeapError::config("schedule.eta0", format!("must be finite and > 0, got {eta0}")));
        }
        match *self {
            ScheduleSpec::Constant { .. } => {}
            ScheduleSpec::StepDecay { gamma, step_size, .. } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(LeapError::config("schedule.gamma", format!("must lie in (0, 1], got {gamma}")));
                }
                if step_size == 0 {
                    return Err(LeapError::config("schedule.step_size", "must be a positive number of epochs"));
                }
            }
            ScheduleSpec::CosineWarmRestart {
                eta_min, t0, t_mult, ..
            } => {
                if !(eta_min >= 0.0 && eta_min <= eta0) {
                    return Err(LeapError::config(
                        "schedule.eta_min",
                        format!("must lie in [0, eta0 = {eta0}], got {eta_min}"),
                    ));
                }
                if t0 == 0 {
                    return Err(LeapError::config("schedule.t0", "must be a positive number of epochs"));
                }
                if t_mult == 0 {
                    return Err(LeapError::config("schedule.t_mult", "must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Base learning rate for a 1-indexed `epoch`.
pub fn eval_schedule(spec: &ScheduleSpec, epoch: u32) -> Result<f64> {
    if epoch == 0 {
        return Err(LeapError::config("epoch", "epochs are 1-indexed; got 0"));
    }
    spec.validate()?;
    let eta = match *spec {
        ScheduleSpec::Constant { eta0 } => eta0,
        ScheduleSpec::StepDecay {
            eta0,
            gamma,
            step_size,
        } => {
            let decays = (epoch - 1) / step_size;
            eta0 * gamma.powi(decays as i32)
        }
        ScheduleSpec::CosineWarmRestart {
            eta0,
            eta_min,
            t0,
            t_mult,
        } => {
            let (t_cur, t_i) = restart_position(epoch, t0, t_mult);
            cosine_cycle_value(eta0, eta_min, t_cur as f64, t_i as f64)
        }
    };
    Ok(eta)
}

/// `(t_cur, t_i)` for a 1-indexed epoch: epochs since the last restart and
/// the length of the current cycle.
pub fn restart_position(epoch: u32, t0: u32, t_mult: u32) -> (u64, u64) {
    let mut remaining = u64::from(epoch - 1);
    let mut cycle = u64::from(t0);
    while remaining >= cycle {
        remaining -= cycle;
        cycle = cycle.saturating_mul(u64::from(t_mult));
    }
    (remaining, cycle)
}

/// The annealing curve inside one cycle, for continuous `t_cur` in `[0, t_i]`.
pub fn cosine_cycle_value(eta0: f64, eta_min: f64, t_cur: f64, t_i: f64) -> f64 {
    // Rounding can push the restart value a ulp past eta0.
    (eta_min + 0.5 * (eta0 - eta_min) * (1.0 + (PI * t_cur / t_i).cos())).clamp(eta_min, eta0)
}
