//! Data preparation and single-seed training for each experiment.

use std::fmt::Write as _;

use leankan::kanode::{
    generate_lv_data, generate_schrodinger_data, kanode_predict, lv_fine_trajectory, perturb_lv_data,
    train_kanode, KanOdeConfig, LvDataConfig, SchrodingerConfig,
};
use leankan::toy::{generate_toy, learnable_outputs};
use leankan::training::train_regression;
use leankan::{Dataset, LossTrace, Network, OdeData, Trajectory};

use crate::config::{Architecture, Experiment, RunConfig};
use crate::error::Result;

/// How the test loss of an ODE experiment is measured; stored in run records.
pub fn test_protocol(experiment: Experiment) -> &'static str {
    match experiment {
        Experiment::Toy => "held-out samples",
        Experiment::LvNoisy => "noise-free rollout over the test window from the clean state at its start",
        Experiment::Schrodinger => "rollout from t = 0 over every output time",
        _ => "rollout over the test window from the last training state",
    }
}

/// Training and test data shared by every seed of one experiment.
#[derive(Debug, Clone)]
pub enum Problem {
    Regression { train: Dataset, test: Dataset },
    Ode { train: OdeData, test: OdeData },
}

/// Snapshot times used to train the Schrödinger surrogate.
pub const SCHRODINGER_TRAIN_TIMES: [f64; 8] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5];

pub fn prepare(cfg: &RunConfig) -> Result<Problem> {
    Ok(match cfg.experiment {
        Experiment::Toy => {
            let (train, test) = generate_toy(cfg.data_seed);
            Problem::Regression { train, test }
        }
        Experiment::LvConverged | Experiment::LvRapid | Experiment::LvSweep => {
            let (train, test) = generate_lv_data(&LvDataConfig::default())?;
            Problem::Ode {
                train: OdeData::from_trajectory(&train),
                test: OdeData::from_trajectory(&test),
            }
        }
        Experiment::LvNoisy => {
            let data_cfg = LvDataConfig::default();
            let (_, test) = generate_lv_data(&data_cfg)?;
            let fine = lv_fine_trajectory(&data_cfg)?;
            let end = fine.times.partition_point(|&t| t <= data_cfg.t_train.1 + 1e-9);
            let noisy = perturb_lv_data(&fine.slice(0, end), cfg.noise, cfg.n_samples, cfg.data_seed)?;
            Problem::Ode {
                train: OdeData::with_initial(data_cfg.t_train.0, data_cfg.u0.clone(), &noisy),
                test: OdeData::from_trajectory(&test),
            }
        }
        Experiment::Schrodinger => {
            let s_cfg = SchrodingerConfig {
                n_x: cfg.n_x,
                ..SchrodingerConfig::default()
            };
            let traj = generate_schrodinger_data(&s_cfg)?;
            let picks: Vec<usize> = SCHRODINGER_TRAIN_TIMES
                .iter()
                .map(|&t| {
                    traj.times
                        .iter()
                        .position(|&s| (s - t).abs() < 1e-9)
                        .expect("training snapshot lies on the output grid")
                })
                .collect();
            let snaps = Trajectory::new(
                picks.iter().map(|&i| traj.times[i]).collect(),
                picks.iter().map(|&i| traj.states[i].clone()).collect(),
            )?;
            Problem::Ode {
                train: OdeData::with_initial(traj.times[0], traj.states[0].clone(), &snaps),
                test: OdeData::from_trajectory(&traj),
            }
        }
    })
}

/// Rollout versus data over both windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub rows: Vec<ReconRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconRow {
    pub t: f64,
    pub window: &'static str,
    pub data: Vec<f64>,
    /// NaN where the rollout diverged.
    pub pred: Vec<f64>,
}

impl Reconstruction {
    pub fn build(net: &Network, train: &OdeData, test: &OdeData, dt_solver: f64) -> Result<Self> {
        let mut rows = Vec::new();
        for (window, data) in [("train", train), ("test", test)] {
            let pred = match kanode_predict(net, data, dt_solver) {
                Ok(p) => p,
                Err(leankan::Error::NonFiniteState { .. }) => vec![vec![f64::NAN; data.dim()]; data.times.len()],
                Err(e) => return Err(e.into()),
            };
            for ((t, d), p) in data.times.iter().zip(&data.states).zip(pred) {
                rows.push(ReconRow {
                    t: *t,
                    window,
                    data: d.clone(),
                    pred: p,
                });
            }
        }
        Ok(Reconstruction { rows })
    }

    /// `t,window,data_1..,pred_1..`
    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.data.len());
        let mut s = String::from("t,window");
        for i in 1..=dim {
            let _ = write!(s, ",data_{i}");
        }
        for i in 1..=dim {
            let _ = write!(s, ",pred_{i}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:.16e},{}", r.t, r.window);
            for v in r.data.iter().chain(&r.pred) {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub architecture: Architecture,
    pub grid: usize,
    pub network: Network,
    pub trace: LossTrace,
    pub reconstruction: Option<Reconstruction>,
    /// 1-based outputs a single toy layer can represent exactly.
    pub learnable: Option<Vec<usize>>,
}

/// Train one network from `seed` on a prepared problem.
pub fn run_seed(cfg: &RunConfig, problem: &Problem, arch: Architecture, grid: usize, seed: u64) -> Result<SeedRun> {
    let net = Network::random(cfg.layer_specs(arch, grid)?, seed)?;
    Ok(match problem {
        Problem::Regression { train, test } => {
            let (network, trace) = train_regression(net, train, test, cfg.epochs, cfg.lr)?;
            let learnable = arch
                .single_kind()
                .and_then(|kind| learnable_outputs(kind, train.input_dim(), train.output_dim()).ok())
                .map(|set| set.into_iter().collect());
            SeedRun {
                seed,
                architecture: arch,
                grid,
                network,
                trace,
                reconstruction: None,
                learnable,
            }
        }
        Problem::Ode { train, test } => {
            let ode_cfg = KanOdeConfig {
                epochs: cfg.epochs,
                lr: cfg.lr,
                dt_solver: cfg.dt_solver,
            };
            let (network, trace) = train_kanode(net, train, test, &ode_cfg)?;
            let reconstruction = Reconstruction::build(&network, train, test, cfg.dt_solver)?;
            SeedRun {
                seed,
                architecture: arch,
                grid,
                network,
                trace,
                reconstruction: Some(reconstruction),
                learnable: None,
            }
        }
    })
}
