//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test -p leap-cli --test acceptance`. Set `LEAP_MNIST_DIR`
//! to a directory holding the MNIST IDX files to run criterion 9 on MNIST;
//! otherwise it uses the blobs fallback.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use leap_core::escape::{minima_selection_experiment, sweep_points, EscapeSettings, SweepPoint};
use leap_core::harness::{self, DataConfig, EscapeConfig, EscapeMode, ExperimentConfig};
use leap_core::landscapes::quadratic_bowl;
use leap_core::models::{forward_loss_view, init_params, loss_and_grad, MLP_ARCHITECTURES};
use leap_core::perturbation::{sample_lr_vector, LeapConfig};
use leap_core::rng::{domain, RngStream};
use leap_core::stats::ols;
use leap_core::{LeapOptimizer, MlpSpec, OptimizerConfig};
use ndarray::Array2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn escape_config(file: &str) -> EscapeConfig {
    EscapeConfig::load(configs_dir().join(file)).expect("shipped escape config loads")
}

fn sweep_of(cfg: &EscapeConfig) -> Vec<SweepPoint> {
    let cl = cfg.landscape.build().expect("landscape builds");
    let EscapeMode::Sweep { basin, grid, trials_per_point, max_steps } = &cfg.escape else {
        panic!("{} is not a sweep config", cfg.name);
    };
    let grid: Vec<(f64, f64)> = grid.iter().map(|[e, s]| (*e, *s)).collect();
    let dynamics = leap_core::escape::Dynamics {
        noise_model: cfg.noise_model,
        gradient_noise_std: cfg.gradient_noise_std,
    };
    sweep_points(&cl.landscape, &cl.catalog[*basin], &grid, *trials_per_point, *max_steps, dynamics, cfg.seed)
        .expect("sweep runs")
        .0
}

/// Slope, R² and point count of the fit over points with a valid estimate
/// and at least `min_escapes` escapes.
fn fit(points: &[SweepPoint], min_escapes: usize) -> (f64, f64, usize) {
    let used: Vec<&SweepPoint> = points.iter().filter(|p| p.estimate.valid && p.estimate.n_escaped >= min_escapes).collect();
    let xs: Vec<f64> = used.iter().map(|p| p.inverse_eta_sigma_sq).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.log_mean_escape_time).collect();
    if used.len() < 2 {
        return (f64::NAN, f64::NAN, used.len());
    }
    let line = ols(&xs, &ys);
    (line.slope, line.r_squared, used.len())
}

fn c1_sampler() -> Outcome {
    let (eta, sigma, draws, m) = (0.1, 0.05, 1_000_000usize, 8usize);
    let cfg = LeapConfig::new(sigma);
    let mut rng = RngStream::for_domain(11, domain::LEAP, 0);
    let mut sum = vec![0.0; m];
    let mut cross = vec![vec![0.0; m]; m];
    for _ in 0..draws {
        let h = sample_lr_vector(eta, &cfg, m, &mut rng).unwrap();
        let c: Vec<f64> = h.values.iter().map(|v| v - eta).collect();
        for i in 0..m {
            sum[i] += c[i];
            for j in i..m {
                cross[i][j] += c[i] * c[j];
            }
        }
    }
    let n = draws as f64;
    let total = n * m as f64;
    let mean_dev = sum.iter().sum::<f64>() / total;
    let se = eta * sigma / total.sqrt();
    let var_pooled: f64 = (0..m).map(|i| cross[i][i] / n - (sum[i] / n).powi(2)).sum::<f64>() / m as f64;
    let target = (eta * sigma).powi(2);
    let var_rel = (var_pooled - target).abs() / target;
    let mut max_r: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let cov = cross[i][j] / n - (sum[i] / n) * (sum[j] / n);
            let vi = cross[i][i] / n - (sum[i] / n).powi(2);
            let vj = cross[j][j] / n - (sum[j] / n).powi(2);
            max_r = max_r.max((cov / (vi * vj).sqrt()).abs());
        }
    }
    let pass = mean_dev.abs() <= 3.0 * se && var_rel <= 0.05 && max_r < 0.01;
    outcome(
        pass,
        format!("{draws} draws x {m} dims: |mean-eta| = {:.2} SE, variance off by {:.3}%, max |r| = {max_r:.4}", mean_dev.abs() / se, 100.0 * var_rel),
    )
}

fn tiny_blobs_config(epochs: u32) -> ExperimentConfig {
    let text = format!(
        r#"
name = "c2"
epochs = {epochs}
seeds = [7]
[model]
layer_dims = [20, 32, 4]
[data]
kind = "blobs"
n_per_class = 100
test_n_per_class = 50
num_classes = 4
dim = 20
separation = 3.0
batch_size = 32
[schedule]
kind = "constant"
eta0 = 0.05
[optimizer]
kind = "sgd"
momentum = 0.9
"#
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn c2_sigma_zero() -> Outcome {
    let mut zero = tiny_blobs_config(5);
    zero.leap = LeapConfig::new(0.0);
    let mut off = zero.clone();
    off.leap = LeapConfig::disabled();
    let data = harness::prepare_data(&zero.data).unwrap();
    let a = harness::train_on(&zero, &data, 7).unwrap();
    let b = harness::train_on(&off, &data, 7).unwrap();
    let identical = a.theta.len() == b.theta.len() && a.theta.iter().zip(&b.theta).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(identical, format!("{} parameters after 5 epochs, bitwise equal: {identical}", a.theta.len()))
}

fn c3_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, dims)) in MLP_ARCHITECTURES.iter().enumerate() {
        let spec = MlpSpec::new(dims);
        let theta = init_params(&spec, &mut RngStream::for_domain(31, domain::INIT, i as u64)).unwrap().values;
        let mut rng = RngStream::for_domain(31, domain::DATA, i as u64);
        let n = 8;
        let inputs = Array2::from_shape_fn((n, dims[0]), |_| rng.uniform());
        let labels: Vec<usize> = (0..n).map(|_| rng.below(spec.num_classes())).collect();
        let (_, grad) = loss_and_grad(&spec, &theta, inputs.view(), &labels).unwrap();
        let mut arch_worst: f64 = 0.0;
        for _ in 0..20 {
            let k = rng.below(theta.len());
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let lp = forward_loss_view(&spec, &plus, inputs.view(), &labels).unwrap().loss;
            let lm = forward_loss_view(&spec, &minus, inputs.view(), &labels).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-6);
            arch_worst = arch_worst.max((fd - grad[k]).abs() / denom);
        }
        parts.push(format!("{name} {arch_worst:.1e}"));
        worst = worst.max(arch_worst);
    }
    outcome(worst < 1e-5, format!("max relative error per architecture: {}", parts.join(", ")))
}

fn c4_contraction() -> Outcome {
    let bowl = quadratic_bowl(&[1.0, 4.0]).unwrap();
    let (reps, steps) = (1000u64, 50usize);
    let mut mean_dist = vec![0.0; steps + 1];
    for rep in 0..reps {
        let mut opt = LeapOptimizer::new(OptimizerConfig::plain_sgd(), LeapConfig::new(0.01), 2).unwrap();
        let mut rng = RngStream::for_domain(41, domain::LEAP, rep);
        let mut theta: Vec<f64> = vec![1.0, 1.0];
        mean_dist[0] += (theta[0] * theta[0] + theta[1] * theta[1]).sqrt();
        for t in 1..=steps {
            let g = bowl.grad(&theta);
            opt.step(&mut theta, &g, 0.2, &mut rng).unwrap();
            mean_dist[t] += (theta[0] * theta[0] + theta[1] * theta[1]).sqrt();
        }
    }
    mean_dist.iter_mut().for_each(|d| *d /= reps as f64);
    let violations = mean_dist.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    outcome(
        violations == 0,
        format!("{reps} reps x {steps} steps: mean distance {:.3} -> {:.3e}, increases: {violations}", mean_dist[0], mean_dist[steps]),
    )
}

fn c5_c6_escape_law() -> (Outcome, Outcome) {
    let base = sweep_of(&escape_config("escape-quartic.toml"));
    let doubled = sweep_of(&escape_config("escape-quartic-barrier2.toml"));
    let (s1, r1, n1) = fit(&base, 300);
    let c5 = outcome(
        n1 >= 6 && s1 > 0.0 && r1 >= 0.95,
        format!("{n1} valid points with >= 300 escapes; slope {s1:.3}, R^2 {r1:.4}"),
    );
    let (s2, r2, n2) = fit(&doubled, 100);
    let ratio = s2 / s1;
    let c6 = outcome(
        n2 >= 4 && (1.6..=2.4).contains(&ratio),
        format!("barrier x2: {n2} valid points, slope {s2:.3} (R^2 {r2:.4}); ratio {ratio:.3}"),
    );
    (c5, c6)
}

fn c7_flat_vs_sharp() -> Outcome {
    let flat = sweep_of(&escape_config("escape-curvature-flat.toml"));
    let sharp = sweep_of(&escape_config("escape-curvature-sharp.toml"));
    let mut ordered = true;
    let mut lines = Vec::new();
    for (f, s) in flat.iter().zip(&sharp) {
        let (fe, se) = (&f.estimate, &s.estimate);
        ordered &= fe.valid && se.valid && fe.mean_steps > se.mean_steps;
        lines.push(format!("x={:.2}: {:.0} vs {:.0}", f.inverse_eta_sigma_sq, fe.mean_steps, se.mean_steps));
    }
    let mut by_x: Vec<(&SweepPoint, &SweepPoint)> = flat.iter().zip(&sharp).collect();
    by_x.sort_by(|a, b| b.0.inverse_eta_sigma_sq.total_cmp(&a.0.inverse_eta_sigma_sq));
    let separated = by_x.iter().take(2).all(|(f, s)| {
        f.estimate.mean_steps - f.estimate.ci_halfwidth_95 > s.estimate.mean_steps + s.estimate.ci_halfwidth_95
    });
    outcome(ordered && separated, format!("flat vs sharp mean steps {}; top-2 CIs disjoint: {separated}", lines.join(", ")))
}

fn selection(file: &str) -> leap_core::escape::MinimaSelection {
    let cfg = escape_config(file);
    let cl = cfg.landscape.build().unwrap();
    let EscapeMode::Selection { eta, sigma, runs, steps, init_interval } = cfg.escape else {
        panic!("{file} is not a selection config");
    };
    let settings = EscapeSettings::new(eta, sigma, steps).with_noise_model(cfg.noise_model);
    minima_selection_experiment(&cl, &settings, runs, init_interval.map(|[a, b]| (a, b)), cfg.seed).unwrap()
}

fn c8_selection() -> Outcome {
    let cf = selection("selection-curvature.toml");
    let sym = selection("selection-symmetric.toml");
    let pass = cf.valid
        && sym.valid
        && cf.n_runs >= 500
        && cf.flat_fraction > 0.5
        && cf.p_value_flat_majority < 0.01
        && (sym.flat_fraction - 0.5).abs() <= sym.ci;
    outcome(
        pass,
        format!(
            "flat fraction {:.3} (p = {:.2e}, {} runs); symmetric control {:.3} ± {:.3}",
            cf.flat_fraction, cf.p_value_flat_majority, cf.n_runs, sym.flat_fraction, sym.ci
        ),
    )
}

fn c9_table_row(root: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::load(configs_dir().join("blobs-mlp3.toml")).unwrap();
    let (ceiling, source) = match std::env::var_os("LEAP_MNIST_DIR") {
        Some(dir) if !dir.is_empty() => {
            cfg.name = "mnist-mlp3".into();
            cfg.data = DataConfig::mnist(PathBuf::from(dir));
            (0.03, "mnist")
        }
        _ => (0.02, "blobs fallback"),
    };
    let out = match harness::run_sweep(&cfg, root) {
        Ok(out) => out,
        Err(e) => return outcome(false, format!("{source}: sweep failed: {e}")),
    };
    let (Some(vanilla), Some(best)) = (out.report.disabled_row(), out.report.best_row()) else {
        return outcome(false, format!("{source}: missing disabled or best row"));
    };
    let pass = vanilla.mean_test_error <= ceiling && best.mean_test_error <= vanilla.mean_test_error && vanilla.n_failed == 0;
    outcome(
        pass,
        format!(
            "{source}: vanilla test error {:.4} (ceiling {ceiling}); best {} test error {:.4}",
            vanilla.mean_test_error, best.label, best.mean_test_error
        ),
    )
}

fn c10_flatness(root: &Path) -> Outcome {
    let cfg = ExperimentConfig::load(configs_dir().join("flatness-mlp3.toml")).unwrap();
    let exp = match harness::run_flatness(&cfg, root, 0) {
        Ok(exp) => exp,
        Err(e) => return outcome(false, format!("flatness failed: {e}")),
    };
    let c = &exp.comparison;
    let valid = c.all_converged && exp.oracle.relative_error <= 1e-3;
    outcome(
        valid,
        format!(
            "converged {}, oracle error {:.1e}; median top eigenvalue LEAP {:.4} vs vanilla {:.4}, p = {:.3} (informational, LEAP flatter: {})",
            c.all_converged,
            exp.oracle.relative_error,
            c.median_top_eigenvalue_leap,
            c.median_top_eigenvalue_vanilla,
            c.p_value_top_eigenvalue,
            c.leap_flatter
        ),
    )
}

const TINY_EXPERIMENT: &str = r#"
name = "det"
epochs = 2
seeds = [1, 2, 3, 4, 5]
[model]
layer_dims = [6, 8, 3]
[data]
kind = "blobs"
n_per_class = 40
test_n_per_class = 20
num_classes = 3
dim = 6
separation = 3.0
batch_size = 16
[schedule]
kind = "cosine_warm_restart"
eta0 = 0.1
eta_min = 0.001
t0 = 1
t_mult = 2
[optimizer]
kind = "adam"
[leap]
sigma = 0.05
[sweep]
sigmas = [0.1, 0.01]
[flatness]
probe_points = 8
max_iters = 50
max_examples = 100
"#;

const TINY_ESCAPE: &str = r#"
name = "det-escape"
seed = 9
[landscape]
kind = "quartic_double_well"
[escape]
mode = "sweep"
trials_per_point = 100
max_steps = 1000000
grid = [[0.01, 8.0], [0.01, 7.5], [0.01, 7.0], [0.01, 6.5]]
"#;

const TINY_SELECTION: &str = r#"
name = "det-selection"
seed = 4
[landscape]
kind = "curvature_family"
k_flat = 2.0
k_sharp = 8.0
delta_l = 1.0
[escape]
mode = "selection"
eta = 0.01
sigma = 10.0
runs = 500
steps = 300
"#;

/// Every CSV/JSON/checkpoint file under `dir`, keyed by relative path.
/// `timing.json` holds wall-clock measurements and is excluded.
fn payloads(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "timing.json") {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn leap(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_leap")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

fn c11_determinism(work: &Path) -> Outcome {
    let exp = work.join("det.toml");
    let esc = work.join("det-escape.toml");
    let sel = work.join("det-selection.toml");
    std::fs::write(&exp, TINY_EXPERIMENT).unwrap();
    std::fs::write(&esc, TINY_ESCAPE).unwrap();
    std::fs::write(&sel, TINY_SELECTION).unwrap();
    let commands: [(&str, &Path, Option<&str>); 6] = [
        ("train", &exp, Some("3")),
        ("report", &exp, None),
        ("sweep", &exp, Some("3")),
        ("escape", &esc, Some("9")),
        ("escape", &sel, Some("4")),
        ("flatness", &exp, Some("0")),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (i, (sub, cfg, seed)) in commands.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = work.join(format!("rep{rep}")).join(format!("{i}-{sub}"));
            if *sub == "report" {
                // `report` re-emits artifacts of a prior `train` into the same root.
                if !leap(&["train", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]) {
                    failures.push("train before report failed".to_string());
                }
            }
            let mut args = vec![*sub, "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()];
            if let Some(s) = seed {
                args.extend(["--seed", s]);
            }
            if !leap(&args) {
                failures.push(format!("{sub} exited nonzero"));
            }
            outputs.push(payloads(&out));
        }
        compared += outputs[0].len();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{sub} payloads differ"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("train, report, sweep, escape (sweep and selection), flatness: {compared} files byte-identical across reruns")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} criterion {n:>2} ({name}): {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o, secs));
    };
    record(1, "sampler", &mut c1_sampler);
    record(2, "sigma=0 equivalence", &mut c2_sigma_zero);
    record(3, "gradient exactness", &mut c3_gradients);
    record(4, "convergence contraction", &mut c4_contraction);
    let t = Instant::now();
    let (c5, c6) = c5_c6_escape_law();
    let secs = t.elapsed().as_secs_f64();
    let mut c5 = Some(c5);
    let mut c6 = Some(c6);
    record(5, "exponential escape law", &mut || c5.take().unwrap());
    record(6, "barrier proportionality", &mut || c6.take().unwrap());
    println!("      (criteria 5 and 6 together took {secs:.1}s)");
    record(7, "flat vs sharp ordering", &mut c7_flat_vs_sharp);
    record(8, "minima selection", &mut c8_selection);
    let root = work.path().join("runs");
    record(9, "MLP-3 table row", &mut || c9_table_row(&root));
    record(10, "flatness direction", &mut || c10_flatness(&root));
    record(11, "determinism", &mut || c11_determinism(work.path()));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
