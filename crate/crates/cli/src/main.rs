//! `leap`: command-line front end for LEAP experiments.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors (including
//! unknown flags and unreadable configs), 2 for failures during a run.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use leap_core::harness::{self, EscapeConfig, EscapeOutcome, ExperimentConfig, RunStatus};
use leap_core::LeapError;

#[derive(Parser)]
#[command(name = "leap", version, about = "Learning-rate perturbation (LEAP) experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output root; overrides LEAP_OUTPUT_ROOT and the config's output_dir.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write report.json, epochs.csv and checkpoint.bin.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every σ of the [sweep] grid plus a LEAP-disabled cell for every seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Use only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Escape-time sweep with fit, or minima selection, on an analytic landscape.
    Escape {
        #[command(flatten)]
        common: Common,
        /// Master seed; overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train vanilla and LEAP arms and compare curvature at their solutions.
    Flatness {
        #[command(flatten)]
        common: Common,
        /// Seed for power-iteration starts and probe coordinates.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-emit CSV/JSON summaries from an experiment's saved artifacts.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    /// Config, usage and contract errors are the caller's to fix.
    fn classify(err: anyhow::Error) -> Self {
        match err.downcast_ref::<LeapError>() {
            Some(LeapError::Config { .. } | LeapError::Usage(_) | LeapError::Contract(_)) => Failure::Invalid(err),
            _ => Failure::Runtime(err),
        }
    }
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path)
        .with_context(|| format!("cannot load experiment config {}", path.display()))
        .map_err(Failure::Invalid)
}

fn load_escape(path: &Path) -> Result<EscapeConfig, Failure> {
    EscapeConfig::load(path)
        .with_context(|| format!("cannot load escape config {}", path.display()))
        .map_err(Failure::Invalid)
}

fn runtime<T>(r: leap_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::classify(e.into()))
}

/// Print a line; a closed stdout (e.g. piped into `head`) is not an error.
fn say(line: impl Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { epoch, batch, detail } => format!("diverged at epoch {epoch}, batch {batch}: {detail}"),
        RunStatus::TimedOut { epoch } => format!("timed out after epoch {epoch}"),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { common, seed } => {
            let mut cfg = load_experiment(&common.config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let root = harness::resolve_output_root(common.output.as_deref(), &cfg.output_dir);
            for out in runtime(harness::run_training(&cfg, &root))? {
                let r = &out.report;
                say(format!(
                    "seed {}: {} | val error {} | test error {} | {} lr samples",
                    r.metadata.seed,
                    status_text(&r.status),
                    fmt_opt(r.final_val_error),
                    fmt_opt(r.final_test_error),
                    r.lr_samples
                ));
            }
            say(format!("artifacts in {}", root.join(&cfg.name).display()));
        }
        Command::Sweep { common, seed } => {
            let mut cfg = load_experiment(&common.config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let root = harness::resolve_output_root(common.output.as_deref(), &cfg.output_dir);
            let out = runtime(harness::run_sweep(&cfg, &root))?;
            for row in &out.report.rows {
                say(format!(
                    "{:<16} val {:.4} ± {:.4} | test {:.4} ± {:.4} | failed {}{}",
                    row.label,
                    row.mean_val_error,
                    row.std_val_error,
                    row.mean_test_error,
                    row.std_test_error,
                    row.n_failed,
                    if row.best { "  <- best (validation)" } else { "" }
                ));
            }
            say(format!("artifacts in {}", root.join(&cfg.name).display()));
        }
        Command::Escape { common, seed } => {
            let mut cfg = load_escape(&common.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let root = harness::resolve_output_root(common.output.as_deref(), &cfg.output_dir);
            let dir = harness::escape_run::escape_dir(&root, &cfg);
            match runtime(harness::run_escape(&cfg, &root))? {
                EscapeOutcome::Sweep { points, fit } => {
                    for p in &points {
                        let e = &p.estimate;
                        say(format!(
                            "eta {} sigma {} | 1/(eta sigma^2) {:.3} | mean steps {:.1} ± {:.1} | escaped {}/{} | {}",
                            p.eta,
                            p.sigma,
                            p.inverse_eta_sigma_sq,
                            e.mean_steps,
                            e.ci_halfwidth_95,
                            e.n_escaped,
                            e.n_trials,
                            if e.valid { "valid" } else { "invalid" }
                        ));
                    }
                    say(format!("artifacts in {}", dir.display()));
                    match fit {
                        Ok(f) => say(format!(
                            "fit: slope {:.4}, intercept {:.4}, R^2 {:.4}, implied s {:.3} (diagnostic)",
                            f.slope, f.intercept, f.r_squared, f.implied_s
                        )),
                        Err(msg) => return Err(Failure::Runtime(anyhow::anyhow!(msg))),
                    }
                }
                EscapeOutcome::Selection(sel) => {
                    say(format!(
                        "flat fraction {:.4} ± {:.4} | flat {} sharp {} outside {} | p(flat <= 1/2) = {:.3e}{}",
                        sel.flat_fraction,
                        sel.ci,
                        sel.n_flat,
                        sel.n_sharp,
                        sel.n_outside,
                        sel.p_value_flat_majority,
                        if sel.valid { "" } else { " | INVALID: more than 5% of runs left both basins" }
                    ));
                    say(format!("artifacts in {}", dir.display()));
                }
            }
        }
        Command::Flatness { common, seed } => {
            let cfg = load_experiment(&common.config)?;
            let root = harness::resolve_output_root(common.output.as_deref(), &cfg.output_dir);
            let exp = runtime(harness::run_flatness(&cfg, &root, seed))?;
            let c = &exp.comparison;
            say(format!(
                "median top eigenvalue: vanilla {:.4}, LEAP {:.4} (one-sided rank test p = {:.4})",
                c.median_top_eigenvalue_vanilla, c.median_top_eigenvalue_leap, c.p_value_top_eigenvalue
            ));
            say(format!(
                "median diag(H) max:    vanilla {:.4}, LEAP {:.4} (p = {:.4})",
                c.median_diag_max_vanilla, c.median_diag_max_leap, c.p_value_diag_max
            ));
            say(format!(
                "power iteration converged on all runs: {} | dense oracle ({} params) relative error {:.2e}",
                c.all_converged, exp.oracle.dim, exp.oracle.relative_error
            ));
            say(format!("artifacts in {}", root.join(&cfg.name).display()));
        }
        Command::Report { common } => {
            let cfg = load_experiment(&common.config)?;
            let root = harness::resolve_output_root(common.output.as_deref(), &cfg.output_dir);
            for path in runtime(harness::emit_report(&root, &cfg.name))? {
                say(format!("wrote {}", path.display()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
