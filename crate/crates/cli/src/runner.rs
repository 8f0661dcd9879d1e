//! `run` and `sweep`: train, then write every artifact of each seed into its
//! own directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Architecture, Experiment, RunConfig, SweepPoint};
use crate::error::{CliError, Result};
use crate::experiments::{prepare, run_seed, Problem, SeedRun};
use crate::record::{median, RunRecord, Summary};

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Run `f` on a pool of `threads` workers (0 picks rayon's default).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config("threads", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    wall_seconds: f64,
}

/// Write the artifacts of one trained seed into `dir`.
pub fn write_seed(dir: &Path, cfg: &RunConfig, problem: &Problem, run: &SeedRun, wall_seconds: f64) -> Result<RunRecord> {
    create_dir(dir)?;
    let mut files = vec!["loss.csv".to_string(), "model.kan".to_string()];
    write(&dir.join("loss.csv"), &run.trace.to_csv())?;
    write(&dir.join("model.kan"), &leankan::model_io::model_to_string(&run.network))?;
    match problem {
        Problem::Regression { train, test } => {
            write(&dir.join("train.csv"), &train.to_csv())?;
            write(&dir.join("test.csv"), &test.to_csv())?;
            files.extend(["train.csv".to_string(), "test.csv".to_string()]);
        }
        Problem::Ode { .. } => {
            if let Some(recon) = &run.reconstruction {
                write(&dir.join("reconstruction.csv"), &recon.to_csv())?;
                files.push("reconstruction.csv".into());
            }
        }
    }
    // the output directory is left out of the echo so that records do not
    // depend on where they were written
    let mut echo = cfg.to_config();
    echo.output_dir = None;
    let record = RunRecord::new(&echo, run, files);
    write(&dir.join("run.json"), &record.to_json())?;
    let timing = serde_json::to_string_pretty(&Timing { wall_seconds }).expect("timing serializes") + "\n";
    write(&dir.join("timing.json"), &timing)?;
    Ok(record)
}

fn train_timed(cfg: &RunConfig, problem: &Problem, arch: Architecture, grid: usize, seed: u64) -> Result<(SeedRun, f64)> {
    let start = Instant::now();
    let run = run_seed(cfg, problem, arch, grid, seed)?;
    Ok((run, start.elapsed().as_secs_f64()))
}

/// Result of `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dirs: Vec<PathBuf>,
    pub runs: Vec<SeedRun>,
    pub records: Vec<RunRecord>,
    pub summary: Option<Summary>,
}

/// Train every seed of a single-architecture experiment. One seed writes
/// straight into the output directory; several get `seed-N/` subdirectories
/// and a `summary.json` of medians.
pub fn run_experiment(cfg: &RunConfig, threads: usize) -> Result<RunOutcome> {
    let arch = cfg.architecture.ok_or_else(|| {
        CliError::config("experiment", format!("`{}` has no single architecture; use `sweep`", cfg.experiment))
    })?;
    let problem = prepare(cfg)?;
    let trained: Vec<(SeedRun, f64)> = with_pool(threads, || {
        cfg.seeds
            .par_iter()
            .map(|&seed| train_timed(cfg, &problem, arch, cfg.grid, seed))
            .collect::<Result<Vec<_>>>()
    })??;

    create_dir(&cfg.output_dir)?;
    let multi = cfg.seeds.len() > 1;
    let mut dirs = Vec::new();
    let mut records = Vec::new();
    for (run, wall) in &trained {
        let dir = if multi {
            cfg.output_dir.join(format!("seed-{}", run.seed))
        } else {
            cfg.output_dir.clone()
        };
        records.push(write_seed(&dir, cfg, &problem, run, *wall)?);
        dirs.push(dir);
    }
    let runs: Vec<SeedRun> = trained.into_iter().map(|(r, _)| r).collect();
    let summary = if multi {
        let rel: Vec<PathBuf> = dirs
            .iter()
            .map(|d| d.strip_prefix(&cfg.output_dir).unwrap_or(d).to_path_buf())
            .collect();
        let s = Summary::new(cfg.experiment, &runs, &rel);
        write(&cfg.output_dir.join("summary.json"), &s.to_json())?;
        Some(s)
    } else {
        None
    };
    Ok(RunOutcome {
        dirs,
        runs,
        records,
        summary,
    })
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: &'static str,
    pub nodes: usize,
    pub grid: usize,
    pub fit: bool,
    pub n_param: usize,
    pub final_train_mse: f64,
    pub final_test_mse: f64,
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "inf".into()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("kind,nodes,grid,n_param,final_train_mse,final_test_mse\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.kind,
            r.nodes,
            r.grid,
            r.n_param,
            fmt_value(r.final_train_mse),
            fmt_value(r.final_test_mse)
        );
    }
    s
}

/// Least-squares slope of `log10 y` against `log10 x`. Points with a
/// non-finite or non-positive value are dropped; `None` with fewer than two
/// distinct `x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindFit {
    pub n_points: usize,
    pub n_flagged: usize,
    /// `null` when fewer than two usable points.
    pub train_slope_all: Option<f64>,
    pub train_slope_flagged: Option<f64>,
    pub test_slope_all: Option<f64>,
    pub test_slope_flagged: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub mult: KindFit,
    pub lean: KindFit,
}

impl SweepFit {
    pub fn from_rows(rows: &[SweepRow]) -> Self {
        let of = |kind: &str| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.kind == kind).collect();
            let pts = |flagged: bool, test: bool| -> Vec<(f64, f64)> {
                mine.iter()
                    .filter(|r| !flagged || r.fit)
                    .map(|r| (r.n_param as f64, if test { r.final_test_mse } else { r.final_train_mse }))
                    .collect()
            };
            KindFit {
                n_points: mine.len(),
                n_flagged: mine.iter().filter(|r| r.fit).count(),
                train_slope_all: loglog_slope(&pts(false, false)),
                train_slope_flagged: loglog_slope(&pts(true, false)),
                test_slope_all: loglog_slope(&pts(false, true)),
                test_slope_flagged: loglog_slope(&pts(true, true)),
            }
        };
        SweepFit {
            mult: of("mult"),
            lean: of("lean"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub fit: SweepFit,
    pub runs: Vec<(SweepPoint, &'static str, SeedRun)>,
}

fn kind_arch(point: SweepPoint, kind: &'static str) -> Architecture {
    if kind == "mult" {
        point.mult()
    } else {
        point.lean()
    }
}

/// Train both variants of every sweep point for every seed. Each job writes
/// to `<kind>-nodes<n>-grid<g>/seed-<s>/`.
pub fn run_sweep(cfg: &RunConfig, threads: usize) -> Result<SweepOutcome> {
    if cfg.experiment != Experiment::LvSweep {
        return Err(CliError::config(
            "experiment",
            format!("`sweep` needs experiment `lv-sweep`, got `{}`", cfg.experiment),
        ));
    }
    let problem = prepare(cfg)?;
    let mut jobs = Vec::new();
    for &p in &cfg.sweep {
        for kind in ["mult", "lean"] {
            for &seed in &cfg.seeds {
                jobs.push((p, kind, seed));
            }
        }
    }
    let trained: Vec<(SeedRun, f64)> = with_pool(threads, || {
        jobs.par_iter()
            .map(|&(p, kind, seed)| train_timed(cfg, &problem, kind_arch(p, kind), p.grid, seed))
            .collect::<Result<Vec<_>>>()
    })??;

    create_dir(&cfg.output_dir)?;
    for (&(p, kind, seed), (run, wall)) in jobs.iter().zip(&trained) {
        let dir = cfg
            .output_dir
            .join(format!("{kind}-nodes{}-grid{}", p.nodes, p.grid))
            .join(format!("seed-{seed}"));
        write_seed(&dir, cfg, &problem, run, *wall)?;
    }

    let mut rows = Vec::new();
    for &p in &cfg.sweep {
        for kind in ["mult", "lean"] {
            let mine: Vec<&SeedRun> = jobs
                .iter()
                .zip(&trained)
                .filter(|((q, k, _), _)| *q == p && *k == kind)
                .map(|(_, (r, _))| r)
                .collect();
            let last = |r: &SeedRun| r.trace.last().expect("trace has the initial record").clone();
            let train: Vec<f64> = mine.iter().map(|r| last(r).train_mse).collect();
            let test: Vec<f64> = mine.iter().map(|r| last(r).test_mse).collect();
            rows.push(SweepRow {
                kind,
                nodes: p.nodes,
                grid: p.grid,
                fit: p.fit,
                n_param: mine[0].network.total_parameters(),
                final_train_mse: median(&train).unwrap_or(f64::INFINITY),
                final_test_mse: median(&test).unwrap_or(f64::INFINITY),
            });
        }
    }
    let fit = SweepFit::from_rows(&rows);
    write(&cfg.output_dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write(&cfg.output_dir.join("fit.json"), &fit.to_json())?;
    let runs = jobs
        .into_iter()
        .zip(trained)
        .map(|((p, kind, _), (run, _))| (p, kind, run))
        .collect();
    Ok(SweepOutcome { rows, fit, runs })
}
