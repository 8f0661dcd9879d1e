//! KAN-ODEs: `du/dt = KAN(u; theta)` integrated with fixed-step RK4 and
//! trained by reverse-mode differentiation through every solver stage.
//!
//! Also home to the ground-truth generators for the Lotka-Volterra system
//! (clean, and noisy with irregular sample times) and for a periodic
//! nonlinear Schrödinger problem solved by the method of lines.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::network::{NetCache, Network, ParamVector};
use crate::training::{EpochRecord, LossTrace};

/// Relative tolerance for deciding that a time sits on the solver grid.
const GRID_SNAP: f64 = 1e-9;

/// Sampled states of an ODE solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Shape {
                context: "trajectory rows",
                expected: times.len(),
                got: states.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.len() != first.len()) {
                return Err(Error::InvalidArgument("trajectory states have ragged dimensions".into()));
            }
        }
        Ok(Trajectory { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            times: self.times[start..end].to_vec(),
            states: self.states[start..end].to_vec(),
        }
    }

    /// Linear interpolation at `t`, clamped to the covered window.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.states[i]
            .iter()
            .zip(&self.states[i + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// CSV `t,u1,..,uD` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.dim() {
            let _ = write!(s, ",u{i}");
        }
        s.push('\n');
        for (t, u) in self.times.iter().zip(&self.states) {
            let _ = write!(s, "{t:.16e}");
            for v in u {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::decode("header", "empty trajectory file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::decode("header", format!("expected leading `t` column, got `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::decode("row", format!("row {} has a non-numeric entry", row + 1)))?;
            if vals.len() != dim + 1 {
                return Err(Error::decode(
                    "row",
                    format!("row {} has {} columns, expected {}", row + 1, vals.len(), dim + 1),
                ));
            }
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        Trajectory::new(times, states).map_err(|e| Error::decode("t", e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Trajectory::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// An initial value problem on a fixed step grid.
pub struct OdeProblem<F> {
    pub rhs: F,
    pub u0: Vec<f64>,
    pub t_span: (f64, f64),
    pub dt: f64,
}

fn grid_steps(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(span > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and a positive time span, got dt = {dt}, span = {span}"
        )));
    }
    let n = (span / dt).round();
    if ((n * dt - span) / span).abs() > GRID_SNAP {
        return Err(Error::InvalidArgument(format!(
            "time span {span} is not a whole number of steps of {dt}"
        )));
    }
    Ok(n as usize)
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(p, q)| p + a * q).collect()
}

fn rk4_combine(u: &[f64], dt: f64, k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Classical RK4 with a fixed step, recording every step.
pub fn rk4_integrate<F>(problem: &OdeProblem<F>) -> Result<Trajectory>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let (t0, t1) = problem.t_span;
    let steps = grid_steps(t1 - t0, problem.dt)?;
    let dt = problem.dt;
    let f = &problem.rhs;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut u = problem.u0.clone();
    times.push(t0);
    states.push(u.clone());
    for n in 0..steps {
        let t = t0 + n as f64 * dt;
        let k1 = f(t, &u);
        let k2 = f(t + 0.5 * dt, &axpy(&u, 0.5 * dt, &k1));
        let k3 = f(t + 0.5 * dt, &axpy(&u, 0.5 * dt, &k2));
        let k4 = f(t + dt, &axpy(&u, dt, &k3));
        u = rk4_combine(&u, dt, &k1, &k2, &k3, &k4);
        let t_next = t0 + (n + 1) as f64 * dt;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_next });
        }
        times.push(t_next);
        states.push(u.clone());
    }
    Ok(Trajectory { times, states })
}

// ---------------------------------------------------------------------------
// Lotka-Volterra

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterra {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        LotkaVolterra {
            alpha: 1.5,
            beta: 1.0,
            gamma: 1.0,
            delta: 3.0,
        }
    }
}

impl LotkaVolterra {
    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let (x, y) = (u[0], u[1]);
        vec![
            self.alpha * x - self.beta * x * y,
            self.gamma * x * y - self.delta * y,
        ]
    }

    /// First integral `gamma x - delta ln x + beta y - alpha ln y`.
    pub fn conserved(&self, u: &[f64]) -> f64 {
        let (x, y) = (u[0], u[1]);
        self.gamma * x - self.delta * x.ln() + self.beta * y - self.alpha * y.ln()
    }

    pub fn integrate(&self, u0: &[f64], t_span: (f64, f64), dt: f64) -> Result<Trajectory> {
        rk4_integrate(&OdeProblem {
            rhs: |_t: f64, u: &[f64]| self.rhs(u),
            u0: u0.to_vec(),
            t_span,
            dt,
        })
    }
}

/// Settings for the clean Lotka-Volterra data set.
#[derive(Debug, Clone, PartialEq)]
pub struct LvDataConfig {
    pub system: LotkaVolterra,
    pub u0: Vec<f64>,
    pub t_train: (f64, f64),
    pub t_test: (f64, f64),
    pub dt: f64,
    pub dt_internal: f64,
}

impl Default for LvDataConfig {
    fn default() -> Self {
        LvDataConfig {
            system: LotkaVolterra::default(),
            u0: vec![1.0, 1.0],
            t_train: (0.0, 3.5),
            t_test: (3.5, 14.0),
            dt: 0.1,
            dt_internal: 0.001,
        }
    }
}

/// Fine ground-truth solution over the union of both windows.
pub fn lv_fine_trajectory(cfg: &LvDataConfig) -> Result<Trajectory> {
    cfg.system
        .integrate(&cfg.u0, (cfg.t_train.0, cfg.t_test.1), cfg.dt_internal)
}

/// Train and test trajectories sampled every `cfg.dt`. The test window
/// starts at the last training time.
pub fn generate_lv_data(cfg: &LvDataConfig) -> Result<(Trajectory, Trajectory)> {
    if cfg.t_train.1 != cfg.t_test.0 {
        return Err(Error::InvalidArgument("test window must start where training ends".into()));
    }
    let fine = lv_fine_trajectory(cfg)?;
    let stride = grid_steps(cfg.dt, cfg.dt_internal)?;
    let n_train = grid_steps(cfg.t_train.1 - cfg.t_train.0, cfg.dt)?;
    let n_total = grid_steps(cfg.t_test.1 - cfg.t_train.0, cfg.dt)?;
    let mut times = Vec::with_capacity(n_total + 1);
    let mut states = Vec::with_capacity(n_total + 1);
    for i in 0..=n_total {
        times.push(cfg.t_train.0 + i as f64 * cfg.dt);
        states.push(fine.states[i * stride].clone());
    }
    let all = Trajectory { times, states };
    Ok((all.slice(0, n_train + 1), all.slice(n_train, n_total + 1)))
}

/// Draw `n_samples` distinct sorted times uniformly from `window`.
pub fn random_sample_times(window: (f64, f64), n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = Vec::with_capacity(n_samples);
    while times.len() < n_samples {
        let t = rng.gen_range(window.0..=window.1);
        if !times.contains(&t) {
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

/// States of `fine` at `times` multiplied elementwise by
/// `1 + noise_frac * eta`, `eta ~ U(-1, 1)` independently per component.
pub fn perturb_at_times(
    fine: &Trajectory,
    times: &[f64],
    noise_frac: f64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if !(noise_frac >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise fraction must be non-negative, got {noise_frac}"
        )));
    }
    let states = times
        .iter()
        .map(|&t| {
            fine.interpolate(t)
                .into_iter()
                .map(|v| {
                    let eta: f64 = rng.gen_range(-1.0..1.0);
                    v * (1.0 + noise_frac * eta)
                })
                .collect()
        })
        .collect();
    Trajectory::new(times.to_vec(), states)
}

/// Noisy, irregularly sampled training data drawn from a fine trajectory.
pub fn perturb_lv_data(
    fine_train: &Trajectory,
    noise_frac: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Trajectory> {
    let window = (fine_train.times[0], fine_train.times[fine_train.len() - 1]);
    let times = random_sample_times(window, n_samples, seed)?;
    // separate stream for the noise so times do not shift with noise_frac
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    perturb_at_times(fine_train, &times, noise_frac, &mut rng)
}

// ---------------------------------------------------------------------------
// Nonlinear Schrödinger, i u_t + u_xx / 2 + |u|^2 u = 0, periodic in x

#[derive(Debug, Clone, PartialEq)]
pub struct SchrodingerConfig {
    /// Grid points including both endpoints; the endpoints are the same
    /// periodic point.
    pub n_x: usize,
    pub x_span: (f64, f64),
    pub t_end: f64,
    pub dt_out: f64,
}

impl Default for SchrodingerConfig {
    fn default() -> Self {
        SchrodingerConfig {
            n_x: 33,
            x_span: (-5.0, 5.0),
            t_end: std::f64::consts::FRAC_PI_2,
            dt_out: 0.01,
        }
    }
}

impl SchrodingerConfig {
    pub fn dx(&self) -> f64 {
        (self.x_span.1 - self.x_span.0) / (self.n_x - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_x).map(|j| self.x_span.0 + j as f64 * dx).collect()
    }

    /// `sech(x)` real part, zero imaginary part, stacked `[re..., im...]`.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.xs().iter().map(|x| 1.0 / x.cosh()).collect();
        // exact periodic copy at the right end
        u[self.n_x - 1] = u[0];
        u.extend(std::iter::repeat(0.0).take(self.n_x));
        u
    }
}

/// `sum |u_j|^2 dx` over the distinct periodic points of a stacked state.
pub fn discrete_mass(state: &[f64], dx: f64) -> f64 {
    let n_x = state.len() / 2;
    let (re, im) = state.split_at(n_x);
    (0..n_x - 1).map(|j| re[j] * re[j] + im[j] * im[j]).sum::<f64>() * dx
}

fn nls_rhs(re: &[f64], im: &[f64], inv_dx2: f64, d_re: &mut [f64], d_im: &mut [f64]) {
    let m = re.len();
    for j in 0..m {
        let l = if j == 0 { m - 1 } else { j - 1 };
        let r = if j + 1 == m { 0 } else { j + 1 };
        let lap_re = (re[l] - 2.0 * re[j] + re[r]) * inv_dx2;
        let lap_im = (im[l] - 2.0 * im[j] + im[r]) * inv_dx2;
        let mag2 = re[j] * re[j] + im[j] * im[j];
        // u_t = i (u_xx / 2 + |u|^2 u)
        d_re[j] = -(0.5 * lap_im + mag2 * im[j]);
        d_im[j] = 0.5 * lap_re + mag2 * re[j];
    }
}

/// Method-of-lines solution sampled every `dt_out`, states stacked
/// `[re(x_1..x_n), im(x_1..x_n)]`.
pub fn generate_schrodinger_data(cfg: &SchrodingerConfig) -> Result<Trajectory> {
    if cfg.n_x < 5 {
        return Err(Error::InvalidArgument(format!("n_x = {} is too small", cfg.n_x)));
    }
    let dx = cfg.dx();
    let limit = 0.1 * dx * dx;
    let substeps = (cfg.dt_out / limit).ceil().max(1.0) as usize;
    let dt = cfg.dt_out / substeps as f64;
    let n_out = ((cfg.t_end / cfg.dt_out) * (1.0 + GRID_SNAP)).floor() as usize;

    let m = cfg.n_x - 1;
    let inv_dx2 = 1.0 / (dx * dx);
    let init = cfg.initial_state();
    let mut re = init[..m].to_vec();
    let mut im = init[cfg.n_x..cfg.n_x + m].to_vec();
    let mass0 = discrete_mass(&init, dx);

    let stack = |re: &[f64], im: &[f64]| {
        let mut s = Vec::with_capacity(2 * cfg.n_x);
        s.extend_from_slice(re);
        s.push(re[0]);
        s.extend_from_slice(im);
        s.push(im[0]);
        s
    };

    let mut times = vec![0.0];
    let mut states = vec![stack(&re, &im)];
    let mut k = vec![vec![0.0; 2 * m]; 4];
    let mut tmp_re = vec![0.0; m];
    let mut tmp_im = vec![0.0; m];
    for step in 1..=n_out {
        for _ in 0..substeps {
            for stage in 0..4 {
                let c = match stage {
                    0 => 0.0,
                    1 | 2 => 0.5 * dt,
                    _ => dt,
                };
                for j in 0..m {
                    let (pr, pi) = if stage == 0 {
                        (0.0, 0.0)
                    } else {
                        (k[stage - 1][j], k[stage - 1][m + j])
                    };
                    tmp_re[j] = re[j] + c * pr;
                    tmp_im[j] = im[j] + c * pi;
                }
                let (kr, ki) = k[stage].split_at_mut(m);
                nls_rhs(&tmp_re, &tmp_im, inv_dx2, kr, ki);
            }
            for j in 0..m {
                re[j] += dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
                im[j] += dt / 6.0 * (k[0][m + j] + 2.0 * k[1][m + j] + 2.0 * k[2][m + j] + k[3][m + j]);
            }
        }
        let s = stack(&re, &im);
        let t = step as f64 * cfg.dt_out;
        let mass = discrete_mass(&s, dx);
        if !mass.is_finite() || mass > 1.1 * mass0 {
            return Err(Error::Unstable(format!(
                "mass grew from {mass0} to {mass} by t = {t}; use a smaller internal step"
            )));
        }
        times.push(t);
        states.push(s);
    }
    Ok(Trajectory { times, states })
}

// ---------------------------------------------------------------------------
// KAN-ODE rollout and discrete adjoint

/// Fitting target for a KAN-ODE: start from `u0` at `t0`, match `states`
/// at `times` (all `>= t0`).
#[derive(Debug, Clone, PartialEq)]
pub struct OdeData {
    pub t0: f64,
    pub u0: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdeData {
    /// Use the first row as the initial condition and every row as a target.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        OdeData {
            t0: traj.times[0],
            u0: traj.states[0].clone(),
            times: traj.times.clone(),
            states: traj.states.clone(),
        }
    }

    /// Targets at arbitrary times with a separately known initial state.
    pub fn with_initial(t0: f64, u0: Vec<f64>, traj: &Trajectory) -> Self {
        OdeData {
            t0,
            u0,
            times: traj.times.clone(),
            states: traj.states.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self.states.clone(),
        }
    }
}

/// Where a sample time lands on the solver grid.
#[derive(Debug, Clone, Copy)]
struct GridPos {
    index: usize,
    frac: f64,
}

fn locate(times: &[f64], t0: f64, dt: f64) -> Result<(Vec<GridPos>, usize)> {
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0;
    for &t in times {
        let s = (t - t0) / dt;
        if s < -GRID_SNAP {
            return Err(Error::InvalidArgument(format!("sample time {t} precedes t0 = {t0}")));
        }
        let r = s.round();
        let pos = if (s - r).abs() <= GRID_SNAP * s.abs().max(1.0) {
            GridPos { index: r as usize, frac: 0.0 }
        } else {
            let f = s.floor();
            GridPos { index: f as usize, frac: s - f }
        };
        steps = steps.max(pos.index + usize::from(pos.frac > 0.0));
        out.push(pos);
    }
    Ok((out, steps))
}

struct Rollout {
    states: Vec<Vec<f64>>,
    caches: Vec<[NetCache; 4]>,
}

fn rollout_with_caches(net: &Network, u0: &[f64], t0: f64, steps: usize, dt: f64) -> Result<Rollout> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut caches = Vec::with_capacity(steps);
    let mut u = u0.to_vec();
    states.push(u.clone());
    for n in 0..steps {
        let (k1, c1) = net.forward(&u)?;
        let (k2, c2) = net.forward(&axpy(&u, 0.5 * dt, &k1))?;
        let (k3, c3) = net.forward(&axpy(&u, 0.5 * dt, &k2))?;
        let (k4, c4) = net.forward(&axpy(&u, dt, &k3))?;
        u = rk4_combine(&u, dt, &k1, &k2, &k3, &k4);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                t: t0 + (n + 1) as f64 * dt,
            });
        }
        states.push(u.clone());
        caches.push([c1, c2, c3, c4]);
    }
    Ok(Rollout { states, caches })
}

fn sample(states: &[Vec<f64>], pos: GridPos) -> Vec<f64> {
    if pos.frac == 0.0 {
        states[pos.index].clone()
    } else {
        axpy(
            &states[pos.index],
            pos.frac,
            &states[pos.index + 1]
                .iter()
                .zip(&states[pos.index])
                .map(|(b, a)| b - a)
                .collect::<Vec<_>>(),
        )
    }
}

fn check_net_dims(net: &Network, dim: usize) -> Result<()> {
    if net.n_in() != dim || net.n_out() != dim {
        return Err(Error::InvalidArgument(format!(
            "KAN-ODE network must map R^{dim} to R^{dim}, got {} -> {}",
            net.n_in(),
            net.n_out()
        )));
    }
    Ok(())
}

/// Integrate the learned dynamics and report the state at each data time.
pub fn kanode_predict(net: &Network, data: &OdeData, dt_solver: f64) -> Result<Vec<Vec<f64>>> {
    check_net_dims(net, data.dim())?;
    let (pos, steps) = locate(&data.times, data.t0, dt_solver)?;
    let mut u = data.u0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(u.clone());
    for n in 0..steps {
        let k1 = net.eval(&u)?;
        let k2 = net.eval(&axpy(&u, 0.5 * dt_solver, &k1))?;
        let k3 = net.eval(&axpy(&u, 0.5 * dt_solver, &k2))?;
        let k4 = net.eval(&axpy(&u, dt_solver, &k3))?;
        u = rk4_combine(&u, dt_solver, &k1, &k2, &k3, &k4);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                t: data.t0 + (n + 1) as f64 * dt_solver,
            });
        }
        states.push(u.clone());
    }
    Ok(pos.iter().map(|&p| sample(&states, p)).collect())
}

/// MSE between the RK4 rollout of `du/dt = net(u)` and the data, plus its
/// exact gradient with respect to every network parameter.
pub fn kanode_loss_and_grad(net: &Network, data: &OdeData, dt_solver: f64) -> Result<(f64, ParamVector)> {
    check_net_dims(net, data.dim())?;
    let dim = data.dim();
    let (pos, steps) = locate(&data.times, data.t0, dt_solver)?;
    let roll = rollout_with_caches(net, &data.u0, data.t0, steps, dt_solver)?;

    let scale = 1.0 / (data.times.len() * dim) as f64;
    let mut loss = 0.0;
    let mut u_bar = vec![vec![0.0; dim]; steps + 1];
    for (p, target) in pos.iter().zip(&data.states) {
        let pred = sample(&roll.states, *p);
        for d in 0..dim {
            let e = pred[d] - target[d];
            loss += e * e;
            let g = 2.0 * e * scale;
            u_bar[p.index][d] += (1.0 - p.frac) * g;
            if p.frac > 0.0 {
                u_bar[p.index + 1][d] += p.frac * g;
            }
        }
    }
    loss *= scale;

    let mut grad = ParamVector::zeros(net.total_parameters());
    let dt = dt_solver;
    for n in (0..steps).rev() {
        let ub = std::mem::take(&mut u_bar[n + 1]);
        if ub.iter().all(|&v| v == 0.0) {
            continue;
        }
        let [c1, c2, c3, c4] = &roll.caches[n];
        let acc = &mut u_bar[n];
        for d in 0..dim {
            acc[d] += ub[d];
        }
        let k4_bar: Vec<f64> = ub.iter().map(|v| v * dt / 6.0).collect();
        let x4 = net.vjp_accumulate(c4, &k4_bar, &mut grad)?;
        let k3_bar = axpy(&ub.iter().map(|v| v * dt / 3.0).collect::<Vec<_>>(), dt, &x4);
        let x3 = net.vjp_accumulate(c3, &k3_bar, &mut grad)?;
        let k2_bar = axpy(&ub.iter().map(|v| v * dt / 3.0).collect::<Vec<_>>(), 0.5 * dt, &x3);
        let x2 = net.vjp_accumulate(c2, &k2_bar, &mut grad)?;
        let k1_bar = axpy(&ub.iter().map(|v| v * dt / 6.0).collect::<Vec<_>>(), 0.5 * dt, &x2);
        let x1 = net.vjp_accumulate(c1, &k1_bar, &mut grad)?;
        for d in 0..dim {
            acc[d] += x4[d] + x3[d] + x2[d] + x1[d];
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KanOdeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dt_solver: f64,
}

fn per_output_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Vec<f64> {
    crate::training::mse_per_output(pred, target).unwrap_or_default()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Adam on [`kanode_loss_and_grad`]. The test loss rolls out from
/// `test.u0` (normally the last training state) across the test times.
pub fn train_kanode(
    mut net: Network,
    train: &OdeData,
    test: &OdeData,
    cfg: &KanOdeConfig,
) -> Result<(Network, LossTrace)> {
    check_net_dims(&net, train.dim())?;
    check_net_dims(&net, test.dim())?;
    let mut adam = AdamState::new(net.total_parameters(), cfg.lr);
    let mut params = net.flatten();
    let mut trace = LossTrace::default();
    let wrap = |epoch: usize, e: Error| match e {
        Error::NonFiniteState { t } => Error::NonFinite {
            epoch,
            what: format!("rollout state at t = {t}"),
        },
        other => other,
    };

    for epoch in 0..=cfg.epochs {
        let (loss, grad) = kanode_loss_and_grad(&net, train, cfg.dt_solver).map_err(|e| wrap(epoch, e))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                epoch,
                what: "training loss".into(),
            });
        }
        let train_pred = kanode_predict(&net, train, cfg.dt_solver).map_err(|e| wrap(epoch, e))?;
        let train_per = per_output_mse(&train_pred, &train.states);
        // a test rollout that diverges is a score, not a training failure
        let test_per = match kanode_predict(&net, test, cfg.dt_solver) {
            Ok(pred) => per_output_mse(&pred, &test.states),
            Err(Error::NonFiniteState { .. }) => vec![f64::INFINITY; test.dim()],
            Err(e) => return Err(e),
        };
        trace.push(EpochRecord {
            epoch,
            train_mse: loss,
            test_mse: mean(&test_per),
            train_per_output: train_per,
            test_per_output: test_per,
        });
        if epoch == cfg.epochs {
            break;
        }
        adam.step(&mut params, &grad)?;
        net.set_params(&params)?;
    }
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::NormalizerKind;
    use crate::layer::{Layer, LayerKind, LayerSpec};
    use crate::network::Template;

    #[test]
    fn rk4_constant_and_linear() {
        let p = OdeProblem {
            rhs: |_t: f64, u: &[f64]| vec![0.0; u.len()],
            u0: vec![1.5, -2.0],
            t_span: (0.0, 1.0),
            dt: 0.1,
        };
        let tr = rk4_integrate(&p).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.states.iter().all(|s| s == &vec![1.5, -2.0]));

        let dt = 0.3;
        let p = OdeProblem {
            rhs: |_t: f64, u: &[f64]| u.to_vec(),
            u0: vec![2.0],
            t_span: (0.0, dt),
            dt,
        };
        let tr = rk4_integrate(&p).unwrap();
        let ratio = tr.states[1][0] / 2.0;
        let expect = 1.0 + dt + dt * dt / 2.0 + dt.powi(3) / 6.0 + dt.powi(4) / 24.0;
        assert!((ratio - expect).abs() < 1e-15);
    }

    #[test]
    fn rk4_rejects_misaligned_span() {
        let p = OdeProblem {
            rhs: |_t: f64, u: &[f64]| u.to_vec(),
            u0: vec![1.0],
            t_span: (0.0, 1.05),
            dt: 0.1,
        };
        assert!(rk4_integrate(&p).is_err());
    }

    #[test]
    fn rk4_reports_blowup_time() {
        let p = OdeProblem {
            rhs: |_t: f64, u: &[f64]| vec![u[0] * u[0] * 1e10],
            u0: vec![1e200],
            t_span: (0.0, 1.0),
            dt: 0.5,
        };
        assert!(matches!(rk4_integrate(&p), Err(Error::NonFiniteState { t }) if t == 0.5));
    }

    #[test]
    fn lv_initial_derivative_and_grid() {
        let lv = LotkaVolterra::default();
        assert_eq!(lv.rhs(&[1.0, 1.0]), vec![0.5, -2.0]);
        let (train, test) = generate_lv_data(&LvDataConfig::default()).unwrap();
        assert_eq!(train.len(), 36);
        assert_eq!(test.len(), 106);
        assert_eq!(train.states[0], vec![1.0, 1.0]);
        assert_eq!(train.states[35], test.states[0]);
        assert!((train.times[35] - 3.5).abs() < 1e-12);
        assert!((test.times[105] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_and_csv() {
        let tr = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![0.0], vec![2.0], vec![0.0]]).unwrap();
        assert_eq!(tr.interpolate(0.25), vec![0.5]);
        assert_eq!(tr.interpolate(1.5), vec![1.0]);
        assert_eq!(tr.interpolate(5.0), vec![0.0]);
        let text = tr.to_csv();
        assert!(text.starts_with("t,u1\n"));
        assert_eq!(Trajectory::from_csv(&text).unwrap(), tr);
        assert!(Trajectory::new(vec![1.0, 1.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(Trajectory::from_csv("t,u1\n0.0,abc\n").is_err());
    }

    #[test]
    fn noise_free_perturbation_is_interpolation() {
        let fine = lv_fine_trajectory(&LvDataConfig::default()).unwrap().slice(0, 3501);
        let times = [0.05, 1.2345, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = perturb_at_times(&fine, &times, 0.0, &mut rng).unwrap();
        for (t, s) in times.iter().zip(&p.states) {
            assert_eq!(&fine.interpolate(*t), s);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(perturb_at_times(&fine, &times, -0.1, &mut rng).is_err());
    }

    #[test]
    fn perturbed_samples_are_sorted_and_deterministic() {
        let fine = lv_fine_trajectory(&LvDataConfig::default()).unwrap().slice(0, 3501);
        let a = perturb_lv_data(&fine, 0.05, 35, 42).unwrap();
        let b = perturb_lv_data(&fine, 0.05, 35, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 35);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        assert!(a.times[0] >= 0.0 && a.times[34] <= 3.5);
        assert!(perturb_lv_data(&fine, 0.05, 1, 42).is_err());
        let c = perturb_lv_data(&fine, 0.05, 35, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_ratio_has_unit_mean() {
        let fine = Trajectory::new(vec![0.0, 1.0], vec![vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap();
        let times: Vec<f64> = (0..5000).map(|i| i as f64 / 5000.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = perturb_at_times(&fine, &times, 0.05, &mut rng).unwrap();
        let ratios: Vec<f64> = p
            .states
            .iter()
            .flat_map(|s| [s[0] / 2.0, s[1] / 3.0])
            .collect();
        let n = ratios.len() as f64;
        let m = ratios.iter().sum::<f64>() / n;
        // eta ~ U(-1,1) has sd 1/sqrt(3)
        let sigma = 0.05 / 3f64.sqrt() / n.sqrt();
        assert!((m - 1.0).abs() < 3.0 * sigma, "mean ratio {m}");
        assert!(ratios.iter().all(|r| (r - 1.0).abs() <= 0.05));
    }

    #[test]
    fn schrodinger_initial_and_boundary() {
        let cfg = SchrodingerConfig::default();
        let tr = generate_schrodinger_data(&cfg).unwrap();
        let xs = cfg.xs();
        assert_eq!(tr.dim(), 66);
        for (j, x) in xs.iter().enumerate() {
            assert!((tr.states[0][j] - 1.0 / x.cosh()).abs() < 1e-15);
            assert_eq!(tr.states[0][33 + j], 0.0);
        }
        for s in &tr.states {
            assert_eq!(s[0], s[32]);
            assert_eq!(s[33], s[65]);
        }
        assert!((tr.times[tr.len() - 1] - 1.57).abs() < 1e-12);
    }

    fn small_net(kind_first: LayerKind, kind_second: LayerKind, seed: u64) -> Network {
        let specs = vec![
            LayerSpec::new(kind_first, 2, 4, 3, NormalizerKind::Tanh, true).unwrap(),
            LayerSpec::new(kind_second, 4, 2, 3, NormalizerKind::Tanh, true).unwrap(),
        ];
        Network::random(specs, seed).unwrap()
    }

    #[test]
    fn self_generated_data_has_zero_loss() {
        let net = small_net(LayerKind::Add, LayerKind::Lean { n_mu: 2 }, 3);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let probe = OdeData {
            t0: 0.0,
            u0: vec![1.0, 1.0],
            times: times.clone(),
            states: vec![vec![0.0; 2]; times.len()],
        };
        let states = kanode_predict(&net, &probe, 0.1).unwrap();
        let data = OdeData { states, ..probe };
        let (loss, grad) = kanode_loss_and_grad(&net, &data, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn one_step_constant_rhs() {
        // a zero first layer feeds 0 into a one-point grid, so the network
        // outputs its single weight c for every state
        let first = LayerSpec::new(LayerKind::Add, 1, 1, 3, NormalizerKind::Tanh, true).unwrap();
        let second = LayerSpec::new(LayerKind::Add, 1, 1, 1, NormalizerKind::Tanh, false).unwrap();
        let c = 0.7;
        let net = Network::new(vec![
            Layer::zeros(first),
            Layer::from_weights(second, vec![c]).unwrap(),
        ])
        .unwrap();
        assert_eq!(net.eval(&[3.0]).unwrap(), vec![c]);
        let (dt, u0, y) = (0.01, 0.4, 0.2);
        let data = OdeData {
            t0: 0.0,
            u0: vec![u0],
            times: vec![dt],
            states: vec![vec![y]],
        };
        let (loss, grad) = kanode_loss_and_grad(&net, &data, dt).unwrap();
        let r = u0 + dt * c - y;
        assert!((loss - r * r).abs() < 1e-15);
        let n = grad.len();
        assert!((grad[n - 1] - 2.0 * r * dt).abs() < 1e-15);
        assert!(grad[..n - 1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn irregular_times_use_interpolation() {
        let net = small_net(LayerKind::Mult { n_a: 2, k: 2 }, LayerKind::Add, 4);
        let data = OdeData {
            t0: 0.0,
            u0: vec![1.0, 1.0],
            times: vec![0.033, 0.25, 0.71],
            states: vec![vec![1.0, 0.9], vec![1.1, 0.7], vec![1.3, 0.5]],
        };
        let pred = kanode_predict(&net, &data, 0.1).unwrap();
        assert_eq!(pred.len(), 3);
        let (loss, _) = kanode_loss_and_grad(&net, &data, 0.1).unwrap();
        let direct = crate::training::mse(&pred, &data.states).unwrap();
        assert!((loss - direct).abs() < 1e-14);
    }

    #[test]
    fn training_zero_epochs_and_determinism() {
        let (train, test) = generate_lv_data(&LvDataConfig::default()).unwrap();
        let train = OdeData::from_trajectory(&train.slice(0, 11));
        let test = OdeData::from_trajectory(&test.slice(0, 11));
        let net = Network::from_template(
            2,
            2,
            &Template::LeanSecond { hidden: 3, n_mu: 2 },
            3,
            NormalizerKind::Tanh,
            true,
            1,
        )
        .unwrap();
        let cfg = KanOdeConfig { epochs: 0, lr: 5e-3, dt_solver: 0.1 };
        let (_, t0) = train_kanode(net.clone(), &train, &test, &cfg).unwrap();
        assert_eq!(t0.len(), 1);
        let cfg = KanOdeConfig { epochs: 20, ..cfg };
        let (_, a) = train_kanode(net.clone(), &train, &test, &cfg).unwrap();
        let (_, b) = train_kanode(net, &train, &test, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.last().unwrap().train_mse < a.first().unwrap().train_mse);
    }
}
