//! Experiment runner for the `leankan` library: config-driven training runs,
//! size sweeps, gradient checks and parameter audits.
//!
//! Exit codes: 0 on success, 1 on a numeric or I/O failure (or a failed
//! check), 2 on a bad config or bad arguments.

pub mod audit;
pub mod config;
pub mod error;
pub mod experiments;
pub mod record;
pub mod runner;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

// stdout writes that tolerate a closed pipe (e.g. `leankan sweep ... | head`)
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

use crate::config::{Architecture, ExperimentConfig, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "leankan", version, about = "Train and audit KAN, MultKAN and LeanKAN models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured experiment and write its records.
    Run(RunArgs),
    /// Train MultKAN and LeanKAN at every configured size.
    Sweep(RunArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print activation and parameter counts.
    AuditParams(AuditArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Train this one seed instead of the configured list.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for seeds and sweep points (0 = one per core).
    #[arg(long, value_name = "K", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub n_in: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub n_out: usize,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    /// Perturb the analytic gradient (checks that failures are reported).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Both variants of each converged Lotka-Volterra structure.
    #[arg(long)]
    pub table2: bool,
    /// Structure to count, e.g. `lean-second:hidden=5,n_mu=3`. Repeatable.
    #[arg(long, value_name = "SPEC")]
    pub arch: Vec<Architecture>,
    #[arg(long, default_value_t = 2)]
    pub n_in: usize,
    #[arg(long, default_value_t = 2)]
    pub n_out: usize,
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// Drop the Swish base term from every activation.
    #[arg(long)]
    pub no_base: bool,
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?.resolve()?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn fmt_mse(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3e}")
    } else {
        "diverged".into()
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    if cfg.experiment == config::Experiment::LvSweep {
        return cmd_sweep_cfg(&cfg, args.threads);
    }
    let out = runner::run_experiment(&cfg, args.threads)?;
    for (dir, rec) in out.dirs.iter().zip(&out.records) {
        outln!(
            "seed {}: {} parameters, final train mse {}, test mse {} -> {}",
            rec.seed,
            rec.n_parameters,
            fmt_mse(rec.trace.final_train_mse),
            rec.trace.final_test_mse.map_or_else(|| "diverged".into(), fmt_mse),
            dir.display()
        );
    }
    if let Some(s) = &out.summary {
        outln!(
            "median over {} seeds: train mse {}, test mse {}",
            s.seeds.len(),
            s.median.final_train_mse.map_or_else(|| "diverged".into(), fmt_mse),
            s.median.final_test_mse.map_or_else(|| "diverged".into(), fmt_mse),
        );
    }
    Ok(0)
}

fn cmd_sweep_cfg(cfg: &RunConfig, threads: usize) -> Result<i32> {
    let out = runner::run_sweep(cfg, threads)?;
    out!("{}", runner::sweep_csv(&out.rows));
    let slope = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |s| format!("{s:.3}"));
    for (kind, f) in [("mult", &out.fit.mult), ("lean", &out.fit.lean)] {
        outln!(
            "{kind}: train slope {} (flagged {}), test slope {} (flagged {})",
            slope(f.train_slope_all),
            slope(f.train_slope_flagged),
            slope(f.test_slope_all),
            slope(f.test_slope_flagged)
        );
    }
    Ok(0)
}

fn cmd_sweep(args: &RunArgs) -> Result<i32> {
    cmd_sweep_cfg(&load_config(args)?, args.threads)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let sizes = leankan::gradcheck::GradCheckSizes {
        n_in: args.n_in,
        hidden: args.hidden,
        n_out: args.n_out,
        grid: args.grid,
    };
    let report = leankan::gradcheck::run_gradcheck(args.seed, sizes, args.corrupt_gradient)
        .map_err(|e| match e {
            leankan::Error::InvalidSpec(msg) => CliError::config("sizes", msg),
            e => e.into(),
        })?;
    out!("{}", report.render());
    Ok(if report.passed() { 0 } else { 1 })
}

fn cmd_audit(args: &AuditArgs) -> Result<i32> {
    let rows = if !args.arch.is_empty() {
        args.arch
            .iter()
            .map(|&a| {
                audit::AuditRow::count(a.to_string(), a, (args.n_in, args.n_out), args.grid, !args.no_base)
                    .map_err(|e| CliError::config("arch", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?
    } else if args.table2 {
        audit::table2_rows()
    } else {
        audit::published_rows()
    };
    out!("{}", audit::render(&rows));
    Ok(if rows.iter().all(audit::AuditRow::matches) { 0 } else { 1 })
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::AuditParams(a) => cmd_audit(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
