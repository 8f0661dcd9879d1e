//! JSON experiment configs. Every field except `schema_version` and
//! `experiment` is optional and falls back to a per-experiment default;
//! unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use leankan::{LayerKind, LayerSpec, NormalizerKind, Template};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Toy,
    LvConverged,
    LvRapid,
    LvNoisy,
    LvSweep,
    Schrodinger,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::LvConverged => "lv-converged",
            Experiment::LvRapid => "lv-rapid",
            Experiment::LvNoisy => "lv-noisy",
            Experiment::LvSweep => "lv-sweep",
            Experiment::Schrodinger => "schrodinger",
        }
    }

    pub fn is_ode(self) -> bool {
        !matches!(self, Experiment::Toy)
    }

    pub fn is_lv(self) -> bool {
        matches!(
            self,
            Experiment::LvConverged | Experiment::LvRapid | Experiment::LvNoisy | Experiment::LvSweep
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Network layout, tagged by `template`. The first three are single layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    Add,
    Mult { n_a: usize, k: usize },
    Lean { n_mu: usize },
    AddAdd { hidden: usize },
    MultFirst { hidden: usize, n_a: usize, k: usize },
    LeanSecond { hidden: usize, n_mu: usize },
}

impl Architecture {
    pub fn template(self) -> Template {
        match self {
            Architecture::Add => Template::Single(LayerKind::Add),
            Architecture::Mult { n_a, k } => Template::Single(LayerKind::Mult { n_a, k }),
            Architecture::Lean { n_mu } => Template::Single(LayerKind::Lean { n_mu }),
            Architecture::AddAdd { hidden } => Template::AddAdd { hidden },
            Architecture::MultFirst { hidden, n_a, k } => Template::MultFirst { hidden, n_a, k },
            Architecture::LeanSecond { hidden, n_mu } => Template::LeanSecond { hidden, n_mu },
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Add => "add",
            Architecture::Mult { .. } => "mult",
            Architecture::Lean { .. } => "lean",
            Architecture::AddAdd { .. } => "add-add",
            Architecture::MultFirst { .. } => "mult-first",
            Architecture::LeanSecond { .. } => "lean-second",
        }
    }

    /// Single-layer kind, if this is a one-layer architecture.
    pub fn single_kind(self) -> Option<LayerKind> {
        match self.template() {
            Template::Single(kind) => Some(kind),
            _ => None,
        }
    }

    pub fn layer_specs(
        self,
        n_in: usize,
        n_out: usize,
        grid: usize,
        normalizer: NormalizerKind,
        base: bool,
    ) -> leankan::Result<Vec<LayerSpec>> {
        self.template().layer_specs(n_in, n_out, grid, normalizer, base)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Architecture::Add => write!(f, "add"),
            Architecture::Mult { n_a, k } => write!(f, "mult:n_a={n_a},k={k}"),
            Architecture::Lean { n_mu } => write!(f, "lean:n_mu={n_mu}"),
            Architecture::AddAdd { hidden } => write!(f, "add-add:hidden={hidden}"),
            Architecture::MultFirst { hidden, n_a, k } => {
                write!(f, "mult-first:hidden={hidden},n_a={n_a},k={k}")
            }
            Architecture::LeanSecond { hidden, n_mu } => {
                write!(f, "lean-second:hidden={hidden},n_mu={n_mu}")
            }
        }
    }
}

/// Parses the compact form printed by `Display`, e.g. `lean-second:hidden=5,n_mu=3`.
impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (tag, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut fields = Vec::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| format!("`{}` is not a non-negative integer", v.trim()))?;
            fields.push((k.trim().to_string(), v));
        }
        let mut take = |key: &str| -> std::result::Result<usize, String> {
            let i = fields
                .iter()
                .position(|(k, _)| k == key)
                .ok_or_else(|| format!("`{tag}` needs `{key}`"))?;
            Ok(fields.remove(i).1)
        };
        let arch = match tag.trim() {
            "add" => Architecture::Add,
            "mult" => Architecture::Mult {
                n_a: take("n_a")?,
                k: take("k")?,
            },
            "lean" => Architecture::Lean { n_mu: take("n_mu")? },
            "add-add" => Architecture::AddAdd {
                hidden: take("hidden")?,
            },
            "mult-first" => Architecture::MultFirst {
                hidden: take("hidden")?,
                n_a: take("n_a")?,
                k: take("k")?,
            },
            "lean-second" => Architecture::LeanSecond {
                hidden: take("hidden")?,
                n_mu: take("n_mu")?,
            },
            other => return Err(format!("unknown template `{other}`")),
        };
        if let Some((k, _)) = fields.first() {
            return Err(format!("unknown field `{k}` for `{}`", arch.tag()));
        }
        Ok(arch)
    }
}

/// One network size in a convergence sweep. Both the MultKAN
/// (`n_a = nodes - n`, `k = 2`) and the LeanKAN (`n_mu = n`) variant are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub nodes: usize,
    pub n: usize,
    pub grid: usize,
    /// Include this point in the flagged-subset slope fit.
    #[serde(default = "default_true")]
    pub fit: bool,
}

fn default_true() -> bool {
    true
}

impl SweepPoint {
    pub const fn new(nodes: usize, n: usize, grid: usize) -> Self {
        SweepPoint {
            nodes,
            n,
            grid,
            fit: true,
        }
    }

    pub fn mult(self) -> Architecture {
        Architecture::MultFirst {
            hidden: self.nodes,
            n_a: self.nodes - self.n,
            k: 2,
        }
    }

    pub fn lean(self) -> Architecture {
        Architecture::LeanSecond {
            hidden: self.nodes,
            n_mu: self.n,
        }
    }
}

/// Four network sizes of the converged Lotka-Volterra study. The third row
/// uses a six-point grid, the only grid that gives its 210/168 counts.
pub const CONVERGENCE_POINTS: [SweepPoint; 4] = [
    SweepPoint::new(4, 2, 3),
    SweepPoint::new(5, 3, 5),
    SweepPoint::new(6, 3, 6),
    SweepPoint::new(10, 5, 5),
];

/// The on-disk form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_solver: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with only the required keys set.
    pub fn minimal(experiment: Experiment) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            architecture: None,
            grid: None,
            normalizer: None,
            base: None,
            epochs: None,
            lr: None,
            dt_solver: None,
            seeds: None,
            data_seed: None,
            noise: None,
            n_samples: None,
            n_x: None,
            sweep: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            CliError::config(key, e.into_inner().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validate every value and fill in defaults.
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self)
    }
}

/// Fully resolved settings. Serializes back to an [`ExperimentConfig`]
/// with every applicable key present, so a config echo can be rerun.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// `None` only for sweeps, whose structures come from `sweep`.
    pub architecture: Option<Architecture>,
    pub grid: usize,
    pub normalizer: NormalizerKind,
    pub base: bool,
    pub epochs: usize,
    pub lr: f64,
    pub dt_solver: f64,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub noise: f64,
    pub n_samples: usize,
    pub n_x: usize,
    pub sweep: Vec<SweepPoint>,
    pub output_dir: PathBuf,
}

struct Defaults {
    architecture: Option<Architecture>,
    grid: usize,
    normalizer: NormalizerKind,
    epochs: usize,
    lr: f64,
    dt_solver: f64,
}

fn defaults(experiment: Experiment) -> Defaults {
    use Architecture::*;
    let (architecture, grid, normalizer, epochs, lr, dt_solver) = match experiment {
        Experiment::Toy => (Some(Lean { n_mu: 2 }), 4, NormalizerKind::Tanh, 3000, 1e-3, 0.0),
        Experiment::LvConverged => (
            Some(LeanSecond { hidden: 10, n_mu: 5 }),
            5,
            NormalizerKind::None,
            20_000,
            2e-4,
            0.1,
        ),
        Experiment::LvRapid => (
            Some(LeanSecond { hidden: 5, n_mu: 3 }),
            4,
            NormalizerKind::None,
            7000,
            5e-3,
            0.1,
        ),
        Experiment::LvNoisy => (
            Some(LeanSecond { hidden: 5, n_mu: 3 }),
            10,
            NormalizerKind::None,
            10_000,
            // 5e-3 left some seeds stuck on noisy data
            2e-3,
            0.05,
        ),
        Experiment::LvSweep => (None, 5, NormalizerKind::None, 20_000, 2e-4, 0.1),
        Experiment::Schrodinger => (
            Some(LeanSecond { hidden: 2, n_mu: 2 }),
            5,
            NormalizerKind::Softsign,
            2000,
            3e-3,
            0.01,
        ),
    };
    Defaults {
        architecture,
        grid,
        normalizer,
        epochs,
        lr,
        dt_solver,
    }
}

fn reject<T>(value: &Option<T>, key: &str, experiment: Experiment) -> Result<()> {
    if value.is_some() {
        return Err(CliError::config(key, format!("not used by the {experiment} experiment")));
    }
    Ok(())
}

fn positive(value: f64, key: &str) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::config(key, format!("must be a positive finite number, got {value}")))
    }
}

impl RunConfig {
    /// Input and output widths of the network this experiment trains.
    pub fn io_dims(&self) -> (usize, usize) {
        match self.experiment {
            Experiment::Toy => (4, 4),
            Experiment::Schrodinger => (2 * self.n_x, 2 * self.n_x),
            _ => (2, 2),
        }
    }

    pub fn layer_specs(&self, arch: Architecture, grid: usize) -> leankan::Result<Vec<LayerSpec>> {
        let (n_in, n_out) = self.io_dims();
        arch.layer_specs(n_in, n_out, grid, self.normalizer, self.base)
    }

    /// Defaults for `experiment` with nothing overridden.
    pub fn defaults(experiment: Experiment) -> RunConfig {
        Self::resolve(&ExperimentConfig::minimal(experiment)).expect("defaults are valid")
    }

    pub fn resolve(cfg: &ExperimentConfig) -> Result<RunConfig> {
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        let exp = cfg.experiment;
        let d = defaults(exp);

        if exp == Experiment::LvSweep {
            reject(&cfg.architecture, "architecture", exp)?;
        } else {
            reject(&cfg.sweep, "sweep", exp)?;
        }
        if exp != Experiment::LvNoisy {
            reject(&cfg.noise, "noise", exp)?;
            reject(&cfg.n_samples, "n_samples", exp)?;
        }
        if exp != Experiment::Schrodinger {
            reject(&cfg.n_x, "n_x", exp)?;
        }
        if !exp.is_ode() {
            reject(&cfg.dt_solver, "dt_solver", exp)?;
        }

        let grid = cfg.grid.unwrap_or(d.grid);
        if grid == 0 {
            return Err(CliError::config("grid", "needs at least one point"));
        }
        let normalizer = match &cfg.normalizer {
            Some(name) => NormalizerKind::from_name(name).ok_or_else(|| {
                CliError::config("normalizer", format!("unknown normalizer `{name}` (tanh, softsign, none)"))
            })?,
            None => d.normalizer,
        };
        let lr = positive(cfg.lr.unwrap_or(d.lr), "lr")?;
        let dt_solver = if exp.is_ode() {
            positive(cfg.dt_solver.unwrap_or(d.dt_solver), "dt_solver")?
        } else {
            0.0
        };
        let seeds = cfg.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(CliError::config("seeds", "must list at least one seed"));
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(CliError::config(format!("seeds[{i}]"), format!("seed {s} is repeated")));
            }
        }
        let noise = cfg.noise.unwrap_or(0.05);
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(CliError::config("noise", format!("must be a non-negative fraction, got {noise}")));
        }
        let n_samples = cfg.n_samples.unwrap_or(35);
        if n_samples < 2 {
            return Err(CliError::config("n_samples", "needs at least 2 samples"));
        }
        let n_x = cfg.n_x.unwrap_or(33);
        if n_x < 5 {
            return Err(CliError::config("n_x", "needs at least 5 grid points"));
        }
        let sweep = if exp == Experiment::LvSweep {
            cfg.sweep.clone().unwrap_or_else(|| CONVERGENCE_POINTS.to_vec())
        } else {
            Vec::new()
        };
        if exp == Experiment::LvSweep && sweep.is_empty() {
            return Err(CliError::config("sweep", "must list at least one structure"));
        }

        let rc = RunConfig {
            experiment: exp,
            architecture: cfg.architecture.or(d.architecture),
            grid,
            normalizer,
            base: cfg.base.unwrap_or(true),
            epochs: cfg.epochs.unwrap_or(d.epochs),
            lr,
            dt_solver,
            seeds,
            data_seed: cfg.data_seed.unwrap_or(0),
            noise,
            n_samples,
            n_x,
            sweep,
            output_dir: cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(exp.name())),
        };

        // build every network once so structural errors surface before any work
        if let Some(arch) = rc.architecture {
            rc.layer_specs(arch, grid)
                .map_err(|e| CliError::config("architecture", e.to_string()))?;
        }
        for (i, p) in rc.sweep.iter().enumerate() {
            if p.nodes == 0 {
                return Err(CliError::config(format!("sweep[{i}].nodes"), "must be positive"));
            }
            if p.n > p.nodes {
                return Err(CliError::config(
                    format!("sweep[{i}].n"),
                    format!("{} multiplication nodes exceed {} hidden nodes", p.n, p.nodes),
                ));
            }
            if p.grid == 0 {
                return Err(CliError::config(format!("sweep[{i}].grid"), "needs at least one point"));
            }
            for arch in [p.mult(), p.lean()] {
                rc.layer_specs(arch, p.grid)
                    .map_err(|e| CliError::config(format!("sweep[{i}]"), e.to_string()))?;
            }
        }
        Ok(rc)
    }

    /// The config as it would be written to disk, with every applicable key set.
    pub fn to_config(&self) -> ExperimentConfig {
        let exp = self.experiment;
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: exp,
            architecture: self.architecture,
            grid: Some(self.grid),
            normalizer: Some(self.normalizer.name().to_string()),
            base: Some(self.base),
            epochs: Some(self.epochs),
            lr: Some(self.lr),
            dt_solver: exp.is_ode().then_some(self.dt_solver),
            seeds: Some(self.seeds.clone()),
            data_seed: Some(self.data_seed),
            noise: (exp == Experiment::LvNoisy).then_some(self.noise),
            n_samples: (exp == Experiment::LvNoisy).then_some(self.n_samples),
            n_x: (exp == Experiment::Schrodinger).then_some(self.n_x),
            sweep: (exp == Experiment::LvSweep).then(|| self.sweep.clone()),
            output_dir: Some(self.output_dir.clone()),
        }
    }
}
