//! `run.json` records and the multi-seed `summary.json`.
//!
//! Non-finite losses (a diverged test rollout) are stored as `null`.

use std::path::{Path, PathBuf};

use leankan::{LayerKind, LayerSpec, LossTrace, NormalizerKind};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiments::{test_protocol, SeedRun};

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub float: String,
}

impl Platform {
    pub fn current() -> Self {
        Platform {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            float: "f64".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mu: Option<usize>,
    pub n_in: usize,
    pub n_out: usize,
    pub grid: usize,
    pub normalizer: String,
    pub base: bool,
}

impl LayerRecord {
    pub fn from_spec(spec: &LayerSpec) -> Self {
        let (n_a, k, n_mu) = match spec.kind {
            LayerKind::Add => (None, None, None),
            LayerKind::Mult { n_a, k } => (Some(n_a), Some(k), None),
            LayerKind::Lean { n_mu } => (None, None, Some(n_mu)),
        };
        LayerRecord {
            kind: spec.kind.tag().into(),
            n_a,
            k,
            n_mu,
            n_in: spec.n_in,
            n_out: spec.n_out,
            grid: spec.grid.n_points(),
            normalizer: spec.normalizer.name().into(),
            base: spec.base_on,
        }
    }

    pub fn to_spec(&self) -> std::result::Result<LayerSpec, String> {
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| format!("{} layer needs `{name}`", self.kind));
        let kind = match self.kind.as_str() {
            "add" => LayerKind::Add,
            "mult" => LayerKind::Mult {
                n_a: need(self.n_a, "n_a")?,
                k: need(self.k, "k")?,
            },
            "lean" => LayerKind::Lean {
                n_mu: need(self.n_mu, "n_mu")?,
            },
            other => return Err(format!("unknown layer kind `{other}`")),
        };
        let normalizer = NormalizerKind::from_name(&self.normalizer)
            .ok_or_else(|| format!("unknown normalizer `{}`", self.normalizer))?;
        LayerSpec::new(kind, self.n_in, self.n_out, self.grid, normalizer, self.base).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Number of recorded epochs, including the initial evaluation.
    pub records: usize,
    pub initial_train_mse: f64,
    pub initial_test_mse: Option<f64>,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    pub best_train_mse: f64,
    pub best_train_epoch: usize,
    pub final_train_per_output: Vec<f64>,
    pub final_test_per_output: Vec<Option<f64>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl TraceSummary {
    pub fn from_trace(trace: &LossTrace) -> Self {
        let first = trace.first().expect("trace has the initial record");
        let last = trace.last().expect("trace has the initial record");
        let (best_train_epoch, best_train_mse) = trace
            .records
            .iter()
            .map(|r| (r.epoch, r.train_mse))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        TraceSummary {
            records: trace.len(),
            initial_train_mse: first.train_mse,
            initial_test_mse: finite(first.test_mse),
            final_train_mse: last.train_mse,
            final_test_mse: finite(last.test_mse),
            best_train_mse,
            best_train_epoch,
            final_train_per_output: last.train_per_output.clone(),
            final_test_per_output: last.test_per_output.iter().map(|&v| finite(v)).collect(),
        }
    }
}

/// Contents of `run.json`. Wall time lives in `timing.json` so this file is
/// byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub record_version: u32,
    pub library_version: String,
    pub platform: Platform,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub architecture: String,
    pub layers: Vec<LayerRecord>,
    pub n_parameters: usize,
    pub n_activations: usize,
    pub test_protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learnable_outputs: Option<Vec<usize>>,
    pub trace: TraceSummary,
    pub files: Vec<String>,
}

impl RunRecord {
    pub fn new(config: &ExperimentConfig, run: &SeedRun, files: Vec<String>) -> Self {
        let specs = run.network.specs();
        RunRecord {
            record_version: RECORD_VERSION,
            library_version: env!("CARGO_PKG_VERSION").into(),
            platform: Platform::current(),
            config: config.clone(),
            seed: run.seed,
            architecture: run.architecture.to_string(),
            layers: specs.iter().map(LayerRecord::from_spec).collect(),
            n_parameters: run.network.total_parameters(),
            n_activations: run.network.total_activations(),
            test_protocol: test_protocol(config.experiment).into(),
            learnable_outputs: run.learnable.clone(),
            trace: TraceSummary::from_trace(&run.trace),
            files,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    /// Parameter count recomputed from the stored layer specs.
    pub fn recomputed_parameters(&self) -> std::result::Result<usize, String> {
        let mut total = 0;
        for (i, l) in self.layers.iter().enumerate() {
            total += l.to_spec().map_err(|e| format!("layers[{i}]: {e}"))?.count_parameters();
        }
        Ok(total)
    }

    /// Check the record against itself: layer specs must be valid, chain
    /// together, and reproduce the stored parameter count.
    pub fn verify(&self) -> std::result::Result<(), String> {
        if self.record_version != RECORD_VERSION {
            return Err(format!("record version {} is not {RECORD_VERSION}", self.record_version));
        }
        let n = self.recomputed_parameters()?;
        if n != self.n_parameters {
            return Err(format!("stored parameter count {} but layers give {n}", self.n_parameters));
        }
        for w in self.layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(format!("layer widths do not chain: {} -> {}", w[0].n_out, w[1].n_in));
            }
        }
        Ok(())
    }

    /// Read and verify a `run.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let rec: RunRecord = serde_json::from_str(&text).map_err(|e| CliError::Record {
            path: path.into(),
            msg: e.to_string(),
        })?;
        rec.verify().map_err(|msg| CliError::Record { path: path.into(), msg })?;
        Ok(rec)
    }
}

/// Median with non-finite values sorted last; `None` when the median itself
/// is not finite.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    finite(m)
}

/// Elementwise median of equally long vectors.
pub fn median_columns(rows: &[Vec<f64>]) -> Vec<Option<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| median(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub dir: String,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub final_train_mse: Option<f64>,
    pub final_test_mse: Option<f64>,
    pub final_train_per_output: Vec<Option<f64>>,
    pub final_test_per_output: Vec<Option<f64>>,
}

impl MedianSummary {
    pub fn of(runs: &[SeedRun]) -> Self {
        let last = |r: &SeedRun| r.trace.last().expect("trace has the initial record").clone();
        let lasts: Vec<_> = runs.iter().map(last).collect();
        MedianSummary {
            final_train_mse: median(&lasts.iter().map(|l| l.train_mse).collect::<Vec<_>>()),
            final_test_mse: median(&lasts.iter().map(|l| l.test_mse).collect::<Vec<_>>()),
            final_train_per_output: median_columns(
                &lasts.iter().map(|l| l.train_per_output.clone()).collect::<Vec<_>>(),
            ),
            final_test_per_output: median_columns(&lasts.iter().map(|l| l.test_per_output.clone()).collect::<Vec<_>>()),
        }
    }
}

/// Contents of `summary.json` for multi-seed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub architecture: String,
    pub n_parameters: usize,
    pub seeds: Vec<u64>,
    pub median: MedianSummary,
    pub runs: Vec<SeedSummary>,
}

impl Summary {
    pub fn new(experiment: Experiment, runs: &[SeedRun], dirs: &[PathBuf]) -> Self {
        let first = &runs[0];
        Summary {
            experiment,
            architecture: first.architecture.to_string(),
            n_parameters: first.network.total_parameters(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            median: MedianSummary::of(runs),
            runs: runs
                .iter()
                .zip(dirs)
                .map(|(r, d)| {
                    let last = r.trace.last().expect("trace has the initial record");
                    SeedSummary {
                        seed: r.seed,
                        dir: d.display().to_string(),
                        final_train_mse: last.train_mse,
                        final_test_mse: finite(last.test_mse),
                    }
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
