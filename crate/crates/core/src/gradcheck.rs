//! Central finite-difference audit of every analytic gradient path.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::NormalizerKind;
use crate::error::Result;
use crate::kanode::{kanode_loss_and_grad, OdeData, Trajectory};
use crate::layer::{LayerKind, LayerSpec};
use crate::network::Network;

pub const DEFAULT_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradCheckSizes {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub grid: usize,
}

impl Default for GradCheckSizes {
    fn default() -> Self {
        GradCheckSizes {
            n_in: 3,
            hidden: 4,
            n_out: 3,
            grid: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub n_checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub threshold: f64,
    pub cases: Vec<CaseResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_err < self.threshold)
    }

    pub fn worst(&self) -> f64 {
        self.cases.iter().fold(0.0, |m, c| m.max(c.max_rel_err))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let _ = writeln!(
                s,
                "{:<44} n={:>4}  max_rel_err={:.3e}  {}",
                c.name,
                c.n_checked,
                c.max_rel_err,
                if c.max_rel_err < self.threshold { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "{} cases, worst {:.3e}, threshold {:.0e}: {}",
            self.cases.len(),
            self.worst(),
            self.threshold,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Largest entrywise deviation scaled by the largest finite-difference entry.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn central_difference(mut f: impl FnMut(&[f64]) -> Result<f64>, at: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut x = at.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let hi = f(&x)?;
        x[i] = orig - step;
        let lo = f(&x)?;
        x[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-lim..lim)).collect()
}

/// Check `d(r . net(x)) / d(theta, x)` for a random probe vector `r`.
fn check_network(name: String, net: &Network, rng: &mut ChaCha8Rng, corrupt: bool) -> Result<CaseResult> {
    let x = uniform_vec(rng, net.n_in(), 1.5);
    let r = uniform_vec(rng, net.n_out(), 1.0);
    let theta = net.flatten();
    let (_, cache) = net.forward(&x)?;
    let (x_bar, grad) = net.vjp(&cache, &r)?;
    let mut analytic: Vec<f64> = grad.to_vec();
    analytic.extend_from_slice(&x_bar);

    let specs = net.specs();
    let dot = |z: Vec<f64>| z.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let mut numeric = central_difference(
        |p| Ok(dot(Network::unflatten(specs.clone(), p)?.eval(&x)?)),
        &theta,
        1e-6,
    )?;
    numeric.extend(central_difference(|xx| Ok(dot(net.eval(xx)?)), &x, 1e-6)?);
    if corrupt {
        analytic[0] += 1e-2 * (1.0 + analytic[0].abs());
    }
    Ok(CaseResult {
        name,
        n_checked: analytic.len(),
        max_rel_err: relative_error(&analytic, &numeric),
    })
}

fn check_kanode(name: String, net: &Network, data: &OdeData, dt: f64) -> Result<CaseResult> {
    let theta = net.flatten();
    let (_, grad) = kanode_loss_and_grad(net, data, dt)?;
    let specs = net.specs();
    let numeric = central_difference(
        |p| Ok(kanode_loss_and_grad(&Network::unflatten(specs.clone(), p)?, data, dt)?.0),
        &theta,
        1e-5,
    )?;
    Ok(CaseResult {
        name,
        n_checked: grad.len(),
        max_rel_err: relative_error(&grad, &numeric),
    })
}

fn kinds(n_out: usize, n_in: usize) -> Vec<LayerKind> {
    vec![
        LayerKind::Add,
        LayerKind::Mult { n_a: n_out / 2, k: 2 },
        LayerKind::Mult { n_a: 0, k: 3 },
        LayerKind::Lean { n_mu: (n_in + 1) / 2 },
        LayerKind::Lean { n_mu: n_in },
    ]
}

/// Run every case. `corrupt` perturbs one analytic entry so the audit can be
/// shown to fail.
pub fn run_gradcheck(seed: u64, sizes: GradCheckSizes, corrupt: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let GradCheckSizes { n_in, hidden, n_out, grid } = sizes;

    // single layers, both normalizers
    for norm in [NormalizerKind::Tanh, NormalizerKind::Softsign] {
        for kind in kinds(n_out, n_in) {
            let spec = LayerSpec::new(kind, n_in, n_out, grid, norm, true)?;
            let net = Network::random(vec![spec], rng.gen())?;
            let name = format!("layer {kind} {n_in}->{n_out} {norm}");
            cases.push(check_network(name, &net, &mut rng, corrupt && cases.is_empty())?);
        }
    }

    // each multiplicative kind as the first and as the second of two layers
    let pairs = [
        (LayerKind::Mult { n_a: hidden / 2, k: 2 }, LayerKind::Add),
        (LayerKind::Mult { n_a: 0, k: 3 }, LayerKind::Add),
        (LayerKind::Lean { n_mu: (n_in + 1) / 2 }, LayerKind::Add),
        (LayerKind::Add, LayerKind::Mult { n_a: n_out / 2, k: 2 }),
        (LayerKind::Add, LayerKind::Lean { n_mu: (hidden + 1) / 2 }),
        (LayerKind::Add, LayerKind::Lean { n_mu: hidden }),
    ];
    for (i, (first, second)) in pairs.into_iter().enumerate() {
        let base_on = i % 2 == 0;
        let specs = vec![
            LayerSpec::new(first, n_in, hidden, grid, NormalizerKind::Tanh, base_on)?,
            LayerSpec::new(second, hidden, n_out, grid, NormalizerKind::Tanh, base_on)?,
        ];
        let net = Network::random(specs, rng.gen())?;
        cases.push(check_network(format!("net [{first}, {second}]"), &net, &mut rng, false)?);
    }

    // KAN-ODE rollouts on a short two-dimensional trajectory
    let dt = 0.1;
    let times: Vec<f64> = (0..=5).map(|i| i as f64 * dt).collect();
    let states: Vec<Vec<f64>> = times
        .iter()
        .map(|t| vec![1.0 + 0.5 * t, 1.0 - 0.8 * t + 0.2 * t * t])
        .collect();
    let regular = OdeData::from_trajectory(&Trajectory::new(times, states)?);
    let irregular = OdeData {
        t0: 0.0,
        u0: vec![1.0, 1.0],
        times: vec![0.07, 0.18, 0.33, 0.41],
        states: vec![vec![1.05, 0.9], vec![1.1, 0.85], vec![1.2, 0.7], vec![1.22, 0.66]],
    };
    let ode_kinds = [
        ("ode [add, add]", LayerKind::Add, LayerKind::Add),
        ("ode [mult, add]", LayerKind::Mult { n_a: hidden / 2, k: 2 }, LayerKind::Add),
        ("ode [add, lean]", LayerKind::Add, LayerKind::Lean { n_mu: (hidden + 1) / 2 }),
    ];
    for (name, first, second) in ode_kinds {
        let specs = vec![
            LayerSpec::new(first, 2, hidden, grid, NormalizerKind::Tanh, true)?,
            LayerSpec::new(second, hidden, 2, grid, NormalizerKind::Tanh, true)?,
        ];
        let net = Network::random(specs, rng.gen())?;
        cases.push(check_kanode(format!("{name} regular"), &net, &regular, dt)?);
        cases.push(check_kanode(format!("{name} irregular"), &net, &irregular, dt)?);
    }

    Ok(GradCheckReport {
        threshold: DEFAULT_THRESHOLD,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes_and_is_deterministic() {
        let a = run_gradcheck(1, GradCheckSizes::default(), false).unwrap();
        assert!(a.cases.len() >= 20, "{}", a.cases.len());
        assert!(a.passed(), "{}", a.render());
        let b = run_gradcheck(1, GradCheckSizes::default(), false).unwrap();
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn corruption_is_caught() {
        let r = run_gradcheck(1, GradCheckSizes::default(), true).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn relative_error_scaling() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.1], &[1.0, 2.0]) - 0.1 / 2.1).abs() < 1e-12);
    }
}
