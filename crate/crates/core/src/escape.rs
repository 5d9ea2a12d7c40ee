//! Monte Carlo first-passage experiments on cataloged landscapes.
//!
//! A trial starts at a catalogued minimum and applies full-batch LEAP
//! updates until the iterate leaves the minimum's basin (escape) or the step
//! horizon runs out (censored).
//!
//! Full-batch gradients vanish at a minimum, so the literal update
//! `theta -= h ∘ grad L` ([`NoiseModel::ExactGradient`]) cannot leave a
//! critical point. The other models keep the drift `eta * grad L` and let
//! the LEAP deviation `h - eta` act on the root-mean-square of a minibatch
//! gradient whose per-coordinate noise variance is `|H_ii|` (Fisher equal to
//! Hessian):
//!
//! * [`NoiseModel::HessianRms`] uses `sqrt(|H_ii|)`, the noise covariance
//!   `eta^2 sigma^2 diag H` the escape-time law is stated for.
//! * [`NoiseModel::GradientRms`] also keeps the mean, `sqrt(g_i^2 + |H_ii|)`.
//!
//! LEAP's `zeta` stays the only source of randomness in every model.

use serde::{Deserialize, Serialize};

use crate::error::{LeapError, Result};
use crate::landscapes::{CatalogedLandscape, Landscape, MinimaCatalogEntry};
use crate::perturbation::{fill_lr_vector, LeapConfig, LrVector};
use crate::rng::{domain, mix_seed, RngStream};
use crate::stats::{binomial_upper_tail, ols, proportion_ci95, sample_std, Z95};

/// Escape estimates with a larger censored fraction are flagged invalid.
pub const MAX_CENSORED_FRACTION: f64 = 0.05;
/// Minimum number of escapes for an estimate to be valid.
pub const MIN_ESCAPES: usize = 100;
/// Minimum number of records `estimate_escape_time` accepts.
pub const MIN_RECORDS: usize = 100;
/// Minimum number of valid grid points for a fit.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `theta -= h ∘ grad L(theta)`.
    ExactGradient,
    /// `theta -= eta * grad L + (h - eta) ∘ sqrt(|diag H(theta)|)`.
    #[default]
    HessianRms,
    /// `theta -= eta * grad L + (h - eta) ∘ sqrt(grad L^2 + |diag H(theta)|)`.
    GradientRms,
}

fn default_noise() -> NoiseModel {
    NoiseModel::default()
}

/// Dynamics of one escape trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSettings {
    pub eta: f64,
    pub sigma: f64,
    pub max_steps: u64,
    #[serde(default = "default_noise")]
    pub noise_model: NoiseModel,
    /// Standard deviation of extra Gaussian noise added to the drift
    /// gradient. Exploratory only; 0 keeps LEAP as the sole noise source.
    #[serde(default)]
    pub gradient_noise_std: f64,
}

/// Noise settings shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Dynamics {
    pub noise_model: NoiseModel,
    pub gradient_noise_std: f64,
}

impl From<NoiseModel> for Dynamics {
    fn from(noise_model: NoiseModel) -> Self {
        Dynamics {
            noise_model,
            gradient_noise_std: 0.0,
        }
    }
}

impl EscapeSettings {
    pub fn new(eta: f64, sigma: f64, max_steps: u64) -> Self {
        EscapeSettings {
            eta,
            sigma,
            max_steps,
            noise_model: NoiseModel::default(),
            gradient_noise_std: 0.0,
        }
    }

    pub fn with_noise_model(mut self, noise_model: NoiseModel) -> Self {
        self.noise_model = noise_model;
        self
    }

    pub fn with_dynamics(mut self, dynamics: Dynamics) -> Self {
        self.noise_model = dynamics.noise_model;
        self.gradient_noise_std = dynamics.gradient_noise_std;
        self
    }

    pub fn leap(&self) -> LeapConfig {
        LeapConfig::new(self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(LeapError::config("escape.eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(LeapError::config("escape.sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if self.max_steps == 0 {
            return Err(LeapError::config("escape.max_steps", "must be >= 1"));
        }
        if !(self.gradient_noise_std.is_finite() && self.gradient_noise_std >= 0.0) {
            return Err(LeapError::config("escape.gradient_noise_std", "must be >= 0"));
        }
        Ok(())
    }
}

/// Outcome of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeTrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub eta: f64,
    pub sigma: f64,
    pub escaped: bool,
    /// Step at which the basin was first left; `None` unless escaped.
    pub escape_step: Option<u64>,
    pub diverged: bool,
    pub final_theta: Vec<f64>,
    pub max_steps: u64,
}

impl EscapeTrialRecord {
    pub fn censored(&self) -> bool {
        !self.escaped && !self.diverged
    }
}

/// Reusable buffers for the update loop.
struct Stepper<'a> {
    landscape: &'a Landscape,
    settings: EscapeSettings,
    leap: LeapConfig,
    grad: Vec<f64>,
    scale: Vec<f64>,
    h: LrVector,
    noise_rng: Option<RngStream>,
}

impl<'a> Stepper<'a> {
    fn new(landscape: &'a Landscape, settings: EscapeSettings, noise_rng: RngStream) -> Self {
        let dim = landscape.dim();
        Stepper {
            landscape,
            settings,
            leap: settings.leap(),
            grad: vec![0.0; dim],
            scale: vec![0.0; dim],
            h: LrVector::constant(settings.eta, dim),
            noise_rng: (settings.gradient_noise_std > 0.0).then_some(noise_rng),
        }
    }

    #[inline]
    fn step(&mut self, theta: &mut [f64], rng: &mut RngStream) -> Result<()> {
        let eta = self.settings.eta;
        self.landscape.grad_into(theta, &mut self.grad);
        if let Some(noise) = self.noise_rng.as_mut() {
            for g in self.grad.iter_mut() {
                *g += self.settings.gradient_noise_std * noise.standard_normal();
            }
        }
        fill_lr_vector(eta, &self.leap, rng, &mut self.h)?;
        match self.settings.noise_model {
            NoiseModel::ExactGradient => {
                for ((t, g), h) in theta.iter_mut().zip(&self.grad).zip(&self.h.values) {
                    *t -= h * g;
                }
            }
            NoiseModel::HessianRms | NoiseModel::GradientRms => {
                let with_mean = self.settings.noise_model == NoiseModel::GradientRms;
                self.landscape.hessian_diag_into(theta, &mut self.scale);
                for i in 0..theta.len() {
                    let g = self.grad[i];
                    let second_moment = if with_mean { g * g + self.scale[i].abs() } else { self.scale[i].abs() };
                    theta[i] -= eta * g + (self.h.values[i] - eta) * second_moment.sqrt();
                }
            }
        }
        Ok(())
    }
}

/// One first-passage trajectory from `entry.location_a`. Deterministic in
/// `(seed, trial_id)`.
pub fn run_escape_trial(landscape: &Landscape, entry: &MinimaCatalogEntry, settings: &EscapeSettings, trial_id: u64, seed: u64) -> Result<EscapeTrialRecord> {
    settings.validate()?;
    entry.validate(landscape)?;
    Ok(run_trial_unchecked(landscape, entry, settings, trial_id, seed))
}

fn run_trial_unchecked(landscape: &Landscape, entry: &MinimaCatalogEntry, settings: &EscapeSettings, trial_id: u64, seed: u64) -> EscapeTrialRecord {
    let mut rng = RngStream::for_domain(seed, domain::ESCAPE, trial_id);
    let noise_rng = RngStream::for_domain(seed, domain::GRADIENT_NOISE, trial_id);
    let mut stepper = Stepper::new(landscape, *settings, noise_rng);
    let mut theta = entry.location_a.clone();
    let mut escape_step = None;
    let mut diverged = false;
    for step in 1..=settings.max_steps {
        if stepper.step(&mut theta, &mut rng).is_err() || theta.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        if !entry.in_basin(&theta) {
            escape_step = Some(step);
            break;
        }
    }
    EscapeTrialRecord {
        trial_id,
        seed,
        eta: settings.eta,
        sigma: settings.sigma,
        escaped: escape_step.is_some(),
        escape_step,
        diverged,
        final_theta: theta,
        max_steps: settings.max_steps,
    }
}

/// `n_trials` trials with ids `0..n_trials`.
pub fn run_escape_trials(landscape: &Landscape, entry: &MinimaCatalogEntry, settings: &EscapeSettings, n_trials: u64, seed: u64) -> Result<Vec<EscapeTrialRecord>> {
    settings.validate()?;
    entry.validate(landscape)?;
    Ok((0..n_trials).map(|id| run_trial_unchecked(landscape, entry, settings, id, seed)).collect())
}

/// Censoring-aware summary of a set of trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeEstimate {
    /// Mean escape step over escaped trials.
    pub mean_steps: f64,
    pub ci_halfwidth_95: f64,
    pub n_trials: usize,
    pub n_escaped: usize,
    pub n_diverged: usize,
    /// Censored trials over non-diverged trials.
    pub censored_fraction: f64,
    pub valid: bool,
}

/// Mean escape step with a normal-approximation 95% interval.
pub fn estimate_escape_time(records: &[EscapeTrialRecord]) -> Result<EscapeEstimate> {
    if records.len() < MIN_RECORDS {
        return Err(LeapError::Usage(format!("need at least {MIN_RECORDS} records, got {}", records.len())));
    }
    let first = &records[0];
    if let Some(r) = records
        .iter()
        .find(|r| r.seed != first.seed || r.eta != first.eta || r.sigma != first.sigma || r.max_steps != first.max_steps)
    {
        return Err(LeapError::Usage(format!(
            "records mix configurations (trial {} differs from trial {})",
            r.trial_id, first.trial_id
        )));
    }
    let steps: Vec<f64> = records.iter().filter_map(|r| r.escape_step).map(|s| s as f64).collect();
    let n_diverged = records.iter().filter(|r| r.diverged).count();
    let n_censored = records.iter().filter(|r| r.censored()).count();
    let live = records.len() - n_diverged;
    let censored_fraction = if live == 0 { 1.0 } else { n_censored as f64 / live as f64 };
    let (mean_steps, ci) = if steps.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = steps.iter().sum::<f64>() / steps.len() as f64;
        (m, Z95 * sample_std(&steps) / (steps.len() as f64).sqrt())
    };
    Ok(EscapeEstimate {
        mean_steps,
        ci_halfwidth_95: ci,
        n_trials: records.len(),
        n_escaped: steps.len(),
        n_diverged,
        censored_fraction,
        valid: censored_fraction <= MAX_CENSORED_FRACTION && steps.len() >= MIN_ESCAPES,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub sigma: f64,
    pub inverse_eta_sigma_sq: f64,
    pub log_mean_escape_time: f64,
    pub estimate: EscapeEstimate,
}

/// Least-squares fit of `log(mean escape steps)` against `1 / (eta sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Fit {
    pub slope: f64,
    /// Absorbs the prefactor `2 pi C / |H_be|` and the step/time conversion.
    pub intercept: f64,
    pub r_squared: f64,
    /// Points used by the fit.
    pub points: Vec<SweepPoint>,
    /// Grid points whose estimate was invalid.
    pub excluded: Vec<SweepPoint>,
    /// Diagnostic only: the path parameter `s` solving
    /// `slope = 2 dL (s / A_ae + (1 - s) / |A_be|)` on a separable landscape.
    pub implied_s: f64,
}

/// Seed used for grid point `index` of a sweep with master seed `seed`.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

/// Escape-time estimates at every `(eta, sigma)` grid point. Point `k` uses
/// seed [`point_seed`]`(seed, k)`.
pub fn sweep_points(
    landscape: &Landscape,
    entry: &MinimaCatalogEntry,
    eta_sigma_grid: &[(f64, f64)],
    trials_per_point: u64,
    max_steps: u64,
    dynamics: impl Into<Dynamics>,
    seed: u64,
) -> Result<(Vec<SweepPoint>, Vec<Vec<EscapeTrialRecord>>)> {
    let dynamics = dynamics.into();
    entry.validate(landscape)?;
    let mut all_records = Vec::with_capacity(eta_sigma_grid.len());
    let mut points = Vec::with_capacity(eta_sigma_grid.len());
    for (index, &(eta, sigma)) in eta_sigma_grid.iter().enumerate() {
        let settings = EscapeSettings::new(eta, sigma, max_steps).with_dynamics(dynamics);
        let records = run_escape_trials(landscape, entry, &settings, trials_per_point, point_seed(seed, index))?;
        let estimate = estimate_escape_time(&records)?;
        points.push(SweepPoint {
            eta,
            sigma,
            inverse_eta_sigma_sq: 1.0 / (eta * sigma * sigma),
            log_mean_escape_time: estimate.mean_steps.ln(),
            estimate,
        });
        all_records.push(records);
    }
    Ok((points, all_records))
}

/// Escape-time sweep over `(eta, sigma)` pairs followed by the exponential-law fit.
pub fn theorem1_sweep(
    landscape: &Landscape,
    entry: &MinimaCatalogEntry,
    eta_sigma_grid: &[(f64, f64)],
    trials_per_point: u64,
    max_steps: u64,
    dynamics: impl Into<Dynamics>,
    seed: u64,
) -> Result<(Theorem1Fit, Vec<Vec<EscapeTrialRecord>>)> {
    let (points, records) = sweep_points(landscape, entry, eta_sigma_grid, trials_per_point, max_steps, dynamics, seed)?;
    Ok((fit_points(entry, points)?, records))
}

/// OLS of log mean escape steps on `1 / (eta sigma^2)` over the valid points.
pub fn fit_points(entry: &MinimaCatalogEntry, all: Vec<SweepPoint>) -> Result<Theorem1Fit> {
    let (points, excluded): (Vec<SweepPoint>, Vec<SweepPoint>) = all.into_iter().partition(|p| p.estimate.valid);
    if points.len() < MIN_FIT_POINTS {
        return Err(LeapError::Fit(format!(
            "only {} valid grid points (need {MIN_FIT_POINTS}); widen the grid or raise max_steps",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.inverse_eta_sigma_sq).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.log_mean_escape_time).collect();
    let line = ols(&xs, &ys);
    let (inv_a, inv_b) = (1.0 / entry.a_ae, 1.0 / entry.a_be.abs());
    let implied_s = (line.slope / (2.0 * entry.delta_l) - inv_b) / (inv_a - inv_b);
    Ok(Theorem1Fit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        points,
        excluded,
        implied_s,
    })
}

/// One CSV row per grid point.
pub fn points_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("eta,sigma,inverse_eta_sigma_sq,mean_steps,ci_halfwidth_95,n_trials,n_escaped,n_diverged,censored_fraction,valid\n");
    for p in points {
        let e = &p.estimate;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.eta, p.sigma, p.inverse_eta_sigma_sq, e.mean_steps, e.ci_halfwidth_95, e.n_trials, e.n_escaped, e.n_diverged, e.censored_fraction, e.valid
        ));
    }
    out
}

/// Result of the basin-occupation experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaSelection {
    pub flat_fraction: f64,
    /// 95% half-width (normal approximation).
    pub ci: f64,
    pub n_runs: u64,
    pub n_flat: u64,
    pub n_sharp: u64,
    pub n_outside: u64,
    /// One-sided binomial p-value for `flat_fraction > 1/2`.
    pub p_value_flat_majority: f64,
    pub init_interval: (f64, f64),
    pub valid: bool,
}

/// Default start interval: symmetric about the saddle, reaching the farther
/// minimum, so each basin receives half of the uniform starts.
pub fn default_init_interval(cl: &CatalogedLandscape) -> (f64, f64) {
    let saddle = cl.catalog[0].location_b[0];
    let reach = cl.catalog.iter().map(|e| (e.location_a[0] - saddle).abs()).fold(0.0, f64::max);
    (saddle - reach, saddle + reach)
}

/// Start uniformly in `init_interval`, run `steps` LEAP updates, and count
/// where each run ends. Expects a 1-D two-basin catalog ordered
/// `[flat, sharp]` (as built by `curvature_family`).
pub fn minima_selection_experiment(
    cl: &CatalogedLandscape,
    settings: &EscapeSettings,
    n_runs: u64,
    init_interval: Option<(f64, f64)>,
    seed: u64,
) -> Result<MinimaSelection> {
    settings.validate()?;
    if cl.catalog.len() != 2 || cl.landscape.dim() != 1 {
        return Err(LeapError::Usage("minima selection needs a 1-D landscape with exactly two catalogued basins".into()));
    }
    if n_runs < 500 {
        return Err(LeapError::Usage(format!("need at least 500 runs, got {n_runs}")));
    }
    let (flat, sharp) = (&cl.catalog[0], &cl.catalog[1]);
    let (lo, hi) = init_interval.unwrap_or_else(|| default_init_interval(cl));
    let (mut n_flat, mut n_sharp, mut n_outside) = (0u64, 0u64, 0u64);
    for run in 0..n_runs {
        let mut start = RngStream::for_domain(seed, domain::START, run);
        let mut rng = RngStream::for_domain(seed, domain::ESCAPE, run);
        let noise_rng = RngStream::for_domain(seed, domain::GRADIENT_NOISE, run);
        let mut stepper = Stepper::new(&cl.landscape, *settings, noise_rng);
        let mut theta = vec![lo + (hi - lo) * start.uniform()];
        let mut ok = true;
        for _ in 0..settings.max_steps {
            if stepper.step(&mut theta, &mut rng).is_err() || !theta[0].is_finite() {
                ok = false;
                break;
            }
        }
        if ok && flat.in_basin(&theta) {
            n_flat += 1;
        } else if ok && sharp.in_basin(&theta) {
            n_sharp += 1;
        } else {
            n_outside += 1;
        }
    }
    let classified = n_flat + n_sharp;
    let flat_fraction = if classified == 0 { f64::NAN } else { n_flat as f64 / classified as f64 };
    Ok(MinimaSelection {
        flat_fraction,
        ci: if classified == 0 { f64::NAN } else { proportion_ci95(n_flat, classified) },
        n_runs,
        n_flat,
        n_sharp,
        n_outside,
        p_value_flat_majority: if classified == 0 { 1.0 } else { binomial_upper_tail(n_flat, classified, 0.5) },
        init_interval: (lo, hi),
        valid: (n_outside as f64) <= 0.05 * n_runs as f64,
    })
}

/// One CSV row per trial: `trial_id,seed,escaped,escape_step,censored`.
pub fn records_to_csv(records: &[EscapeTrialRecord]) -> String {
    let mut out = String::from("trial_id,seed,escaped,escape_step,censored\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.trial_id,
            r.seed,
            r.escaped,
            r.escape_step.map(|s| s.to_string()).unwrap_or_default(),
            r.censored()
        ));
    }
    out
}
