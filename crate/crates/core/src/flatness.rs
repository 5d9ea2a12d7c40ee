//! Curvature at trained solutions: finite-difference Hessian-vector
//! products, the dominant Hessian eigenvalue by power iteration, and
//! coordinate-wise Hessian diagonals.
//!
//! Every routine takes a gradient oracle `FnMut(&[f64]) -> Result<Vec<f64>>`
//! so the same code measures analytic landscapes and MLP training losses.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LeapError, Result};
use crate::linalg::{dot, norm, symmetric_eigen};
use crate::models::{loss_and_grad, MlpSpec};
use crate::rng::{domain, RngStream};
use crate::stats::{mann_whitney_less, mean, median, quantile};

/// Relative step for HVPs and diagonal probes, scaled by `1 + |theta_i|`.
pub const DEFAULT_FD_EPSILON: f64 = 1e-4;
const UNIT_NORM_SLACK: f64 = 1e-10;
const MAX_RESTARTS: usize = 3;

fn check_finite(values: &[f64], location: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(LeapError::numeric(location, format!("non-finite gradient entry {i}"))),
        None => Ok(()),
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(LeapError::config("flatness.fd_epsilon", format!("must be > 0, got {epsilon}")))
    }
}

/// `(grad(theta + eps v) - grad(theta - eps v)) / (2 eps)` for a unit `v`.
pub fn hvp_fd<G>(grad: &mut G, theta: &[f64], v: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_epsilon(epsilon)?;
    if theta.len() != v.len() {
        return Err(LeapError::Contract(format!("theta has {} entries, v has {}", theta.len(), v.len())));
    }
    let nv = norm(v);
    if (nv - 1.0).abs() > UNIT_NORM_SLACK {
        return Err(LeapError::Usage(format!("probe direction must be a unit vector, |v| = {nv}")));
    }
    let probe: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + epsilon * d).collect();
    let plus = grad(&probe)?;
    check_finite(&plus, "hvp probe theta + eps v")?;
    let probe: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - epsilon * d).collect();
    let minus = grad(&probe)?;
    check_finite(&minus, "hvp probe theta - eps v")?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * epsilon)).collect())
}

/// Diagonal entries `H_ii` for the listed coordinates, each probed with
/// step `epsilon * (1 + |theta_i|)`.
pub fn hessian_diag_fd_at<G>(grad: &mut G, theta: &[f64], coords: &[usize], epsilon: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_epsilon(epsilon)?;
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        if i >= theta.len() {
            return Err(LeapError::Contract(format!("coordinate {i} out of range for {} parameters", theta.len())));
        }
        let step = epsilon * (1.0 + theta[i].abs());
        probe[i] = theta[i] + step;
        let plus = grad(&probe)?;
        check_finite(&plus, &format!("diagonal probe {i} (+)"))?;
        probe[i] = theta[i] - step;
        let minus = grad(&probe)?;
        check_finite(&minus, &format!("diagonal probe {i} (-)"))?;
        probe[i] = theta[i];
        out.push((plus[i] - minus[i]) / (2.0 * step));
    }
    Ok(out)
}

/// Full Hessian diagonal; `2 M` gradient evaluations.
pub fn hessian_diag_fd<G>(grad: &mut G, theta: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    hessian_diag_fd_at(grad, theta, &coords, epsilon)
}

/// Dense Hessian assembled column by column from `hvp_fd(e_j)`, then
/// symmetrised. Intended for small models (`dim <= 50`) as an oracle.
pub fn assemble_hessian_fd<G>(grad: &mut G, theta: &[f64], epsilon: f64) -> Result<Array2<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = theta.len();
    let mut h = Array2::<f64>::zeros((n, n));
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = hvp_fd(grad, theta, &e, epsilon)?;
        e[j] = 0.0;
        for i in 0..n {
            h[[i, j]] = col[i];
        }
    }
    let sym = (&h + &h.t()) * 0.5;
    Ok(sym)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerIteration {
    /// Rayleigh quotient at termination (dominant-magnitude eigenvalue, signed).
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// Rayleigh quotient after each iteration.
    pub history: Vec<f64>,
}

/// Power iteration on a symmetric operator from a random unit start.
/// Stops when successive Rayleigh quotients differ by less than
/// `tol * max(1, |lambda|)` or after `max_iters`. A zero image restarts from
/// a fresh random vector, at most three times.
pub fn top_eigenvalue_power_iteration<H>(mut hvp: H, dim: usize, max_iters: usize, tol: f64, rng: &mut RngStream) -> Result<PowerIteration>
where
    H: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if max_iters == 0 {
        return Err(LeapError::config("flatness.max_iters", "must be >= 1"));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(LeapError::config("flatness.tol", format!("must be > 0, got {tol}")));
    }
    if dim == 0 {
        return Err(LeapError::Usage("operator dimension must be >= 1".into()));
    }
    let random_unit = |rng: &mut RngStream| -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let mut restarts = 0;
    let mut v = random_unit(rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let hv = hvp(&v)?;
        let n = norm(&hv);
        if !n.is_finite() {
            return Err(LeapError::numeric("power iteration", "non-finite Hessian-vector product"));
        }
        if n == 0.0 {
            if restarts == MAX_RESTARTS {
                return Err(LeapError::numeric(
                    "power iteration",
                    format!("zero Hessian-vector product after {MAX_RESTARTS} restarts"),
                ));
            }
            restarts += 1;
            v = random_unit(rng);
            continue;
        }
        iterations += 1;
        let rayleigh = dot(&v, &hv);
        let done = history.last().is_some_and(|&prev: &f64| (rayleigh - prev).abs() < tol * rayleigh.abs().max(1.0));
        history.push(rayleigh);
        v = hv.iter().map(|x| x / n).collect();
        if done {
            converged = true;
            break;
        }
    }
    Ok(PowerIteration {
        eigenvalue: *history.last().expect("at least one iteration ran"),
        iterations,
        converged,
        restarts,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessSettings {
    #[serde(default = "default_eps")]
    pub fd_epsilon: f64,
    /// Number of randomly chosen coordinates whose `H_ii` is probed.
    /// A value of at least the parameter count probes every coordinate.
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Training examples used for the full-batch loss; 0 means all.
    #[serde(default = "default_max_examples")]
    pub max_examples: usize,
}

fn default_eps() -> f64 {
    DEFAULT_FD_EPSILON
}
fn default_probe_points() -> usize {
    64
}
fn default_max_iters() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-4
}
fn default_max_examples() -> usize {
    10_000
}

impl Default for FlatnessSettings {
    fn default() -> Self {
        FlatnessSettings {
            fd_epsilon: default_eps(),
            probe_points: default_probe_points(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            max_examples: default_max_examples(),
        }
    }
}

impl FlatnessSettings {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.fd_epsilon)?;
        if self.probe_points == 0 {
            return Err(LeapError::config("flatness.probe_points", "must be >= 1"));
        }
        if self.max_iters == 0 {
            return Err(LeapError::config("flatness.max_iters", "must be >= 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(LeapError::config("flatness.tol", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagSummary {
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
}

impl DiagSummary {
    pub fn of(diag: &[f64]) -> Self {
        DiagSummary {
            mean: mean(diag),
            max: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            p95: quantile(diag, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub top_eigenvalue: f64,
    pub power_iterations: usize,
    pub converged: bool,
    pub hessian_diag_summary: DiagSummary,
    pub probe_points: usize,
    pub fd_epsilon: f64,
    /// Examples in the loss the curvature was measured on.
    pub examples_used: usize,
}

/// Distinct coordinates in `0..m` (all of them when `k >= m`), sorted.
pub fn probe_coordinates(m: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut all: Vec<usize> = (0..m).collect();
    if k >= m {
        return all;
    }
    // Partial Fisher-Yates.
    for i in 0..k {
        let j = i + rng.below(m - i);
        all.swap(i, j);
    }
    let mut picked = all[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Curvature report for any gradient oracle. Power-iteration starts and
/// probe coordinates are drawn from `rng`.
pub fn flatness_report<G>(mut grad: G, theta: &[f64], settings: &FlatnessSettings, examples_used: usize, rng: &mut RngStream) -> Result<FlatnessReport>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    settings.validate()?;
    let eps = settings.fd_epsilon;
    let power = top_eigenvalue_power_iteration(|v| hvp_fd(&mut grad, theta, v, eps), theta.len(), settings.max_iters, settings.tol, rng)?;
    let coords = probe_coordinates(theta.len(), settings.probe_points, rng);
    let diag = hessian_diag_fd_at(&mut grad, theta, &coords, eps)?;
    Ok(FlatnessReport {
        top_eigenvalue: power.eigenvalue,
        power_iterations: power.iterations,
        converged: power.converged,
        hessian_diag_summary: DiagSummary::of(&diag),
        probe_points: coords.len(),
        fd_epsilon: eps,
        examples_used,
    })
}

/// The subset of `dataset` used for flatness: the first `max_examples` rows
/// (all rows when 0 or larger than the dataset).
pub fn flatness_subset(dataset: &Dataset, max_examples: usize) -> Dataset {
    if max_examples == 0 || max_examples >= dataset.len() {
        return dataset.clone();
    }
    let idx: Vec<usize> = (0..max_examples).collect();
    dataset.subset(&idx, format!("{}[..{max_examples}]", dataset.name))
}

/// Full-batch training-loss gradient oracle for an MLP.
pub fn mlp_gradient<'a>(spec: &'a MlpSpec, data: &'a Dataset) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    move |theta| loss_and_grad(spec, theta, data.inputs.view(), &data.labels).map(|(_, g)| g)
}

/// A trained solution to measure.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRun {
    pub seed: u64,
    pub spec: MlpSpec,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessRow {
    pub arm: String,
    pub seed: u64,
    pub report: FlatnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessComparison {
    pub median_top_eigenvalue_vanilla: f64,
    pub median_top_eigenvalue_leap: f64,
    pub median_diag_max_vanilla: f64,
    pub median_diag_max_leap: f64,
    /// One-sided Mann-Whitney p-value for `LEAP < vanilla` on `top_eigenvalue`.
    pub p_value_top_eigenvalue: f64,
    /// Same test on the diagonal maximum.
    pub p_value_diag_max: f64,
    /// `median(LEAP) <= median(vanilla)` for the top eigenvalue.
    pub leap_flatter: bool,
    pub all_converged: bool,
    pub rows: Vec<FlatnessRow>,
}

/// Medians and rank tests over precomputed per-seed reports.
pub fn summarize_comparison(vanilla: &[(u64, FlatnessReport)], leap: &[(u64, FlatnessReport)]) -> Result<FlatnessComparison> {
    if vanilla.is_empty() || leap.is_empty() {
        return Err(LeapError::Usage("both arms need at least one report".into()));
    }
    let top = |rs: &[(u64, FlatnessReport)]| rs.iter().map(|(_, r)| r.top_eigenvalue).collect::<Vec<_>>();
    let dmax = |rs: &[(u64, FlatnessReport)]| rs.iter().map(|(_, r)| r.hessian_diag_summary.max).collect::<Vec<_>>();
    let (tv, tl, dv, dl) = (top(vanilla), top(leap), dmax(vanilla), dmax(leap));
    let rows = vanilla
        .iter()
        .map(|(s, r)| ("vanilla", s, r))
        .chain(leap.iter().map(|(s, r)| ("leap", s, r)))
        .map(|(arm, &seed, r)| FlatnessRow {
            arm: arm.to_string(),
            seed,
            report: r.clone(),
        })
        .collect::<Vec<_>>();
    Ok(FlatnessComparison {
        median_top_eigenvalue_vanilla: median(&tv),
        median_top_eigenvalue_leap: median(&tl),
        median_diag_max_vanilla: median(&dv),
        median_diag_max_leap: median(&dl),
        p_value_top_eigenvalue: mann_whitney_less(&tl, &tv).1,
        p_value_diag_max: mann_whitney_less(&dl, &dv).1,
        leap_flatter: median(&tl) <= median(&tv),
        all_converged: rows.iter().all(|r| r.report.converged),
        rows,
    })
}

/// Flatness of each trained run on the (subsampled) training set, then
/// per-arm medians with one-sided rank tests.
pub fn compare_flatness(
    vanilla: &[TrainedRun],
    leap: &[TrainedRun],
    train: &Dataset,
    settings: &FlatnessSettings,
    seed: u64,
) -> Result<FlatnessComparison> {
    settings.validate()?;
    if vanilla.len() < 5 || leap.len() < 5 {
        return Err(LeapError::Usage(format!(
            "need at least 5 runs per arm, got {} vanilla and {} LEAP",
            vanilla.len(),
            leap.len()
        )));
    }
    let spec = &vanilla[0].spec;
    for run in vanilla.iter().chain(leap) {
        if run.spec != *spec {
            return Err(LeapError::Usage(format!("run with seed {} uses a different model spec", run.seed)));
        }
        if run.theta.len() != spec.param_count() {
            return Err(LeapError::Usage(format!(
                "run with seed {} has {} parameters, model expects {}",
                run.seed,
                run.theta.len(),
                spec.param_count()
            )));
        }
    }
    let data = flatness_subset(train, settings.max_examples);
    let measure = |runs: &[TrainedRun], arm: u64| -> Result<Vec<(u64, FlatnessReport)>> {
        runs.iter()
            .enumerate()
            .map(|(i, run)| {
                let mut rng = RngStream::for_domain(seed, domain::POWER_ITERATION, (arm << 32) | i as u64);
                let report = flatness_report(mlp_gradient(spec, &data), &run.theta, settings, data.len(), &mut rng)?;
                Ok((run.seed, report))
            })
            .collect()
    };
    summarize_comparison(&measure(vanilla, 0)?, &measure(leap, 1)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCheck {
    pub dim: usize,
    pub power_iteration: f64,
    pub dense: f64,
    pub relative_error: f64,
    pub diag_max_abs_error: f64,
}

/// Cross-check on a small MLP (`dim <= 50`): power iteration and the probed
/// diagonal against the eigendecomposition and diagonal of the explicitly
/// assembled FD Hessian.
pub fn dense_oracle_check(spec: &MlpSpec, theta: &[f64], data: &Dataset, settings: &FlatnessSettings, rng: &mut RngStream) -> Result<OracleCheck> {
    let dim = theta.len();
    if dim > 50 {
        return Err(LeapError::Usage(format!("dense oracle is limited to 50 parameters, got {dim}")));
    }
    let mut grad = mlp_gradient(spec, data);
    let h = assemble_hessian_fd(&mut grad, theta, settings.fd_epsilon)?;
    let (vals, _) = symmetric_eigen(&h);
    let dense = if vals[0].abs() > vals[dim - 1].abs() { vals[0] } else { vals[dim - 1] };
    let eps = settings.fd_epsilon;
    let power = top_eigenvalue_power_iteration(|v| hvp_fd(&mut grad, theta, v, eps), dim, settings.max_iters, settings.tol, rng)?;
    let diag = hessian_diag_fd(&mut grad, theta, eps)?;
    let diag_err = diag.iter().enumerate().map(|(i, d)| (d - h[[i, i]]).abs()).fold(0.0, f64::max);
    Ok(OracleCheck {
        dim,
        power_iteration: power.eigenvalue,
        dense,
        relative_error: (power.eigenvalue - dense).abs() / dense.abs().max(f64::MIN_POSITIVE),
        diag_max_abs_error: diag_err,
    })
}
