//! Scalar building blocks of a single activation function.
//!
//! An activation is
//!
//! ```text
//! phi(x) = sum_i w_i * exp(-(x - c_i)^2 / (2 h^2)) + w_b * swish(x)
//! ```
//!
//! where `x` is the already-normalized input. Weights for one activation are
//! packed as `[w_1, ..., w_N, w_b]`, with the trailing base weight present only
//! when the base term is switched on.

use crate::error::{Error, Result};

/// Gaussian radial basis function of distance `r` with spread `h`.
#[inline]
pub fn rbf_eval(r: f64, h: f64) -> f64 {
    (-(r * r) / (2.0 * h * h)).exp()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * sigmoid(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Squashing applied to every layer input before its activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NormalizerKind {
    #[default]
    Tanh,
    Softsign,
    None,
}

impl NormalizerKind {
    pub fn name(self) -> &'static str {
        match self {
            NormalizerKind::Tanh => "tanh",
            NormalizerKind::Softsign => "softsign",
            NormalizerKind::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(NormalizerKind::Tanh),
            "softsign" => Some(NormalizerKind::Softsign),
            "none" => Some(NormalizerKind::None),
            _ => None,
        }
    }
}

impl std::fmt::Display for NormalizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
pub fn normalize(x: f64, kind: NormalizerKind) -> f64 {
    match kind {
        NormalizerKind::Tanh => x.tanh(),
        NormalizerKind::Softsign => x / (1.0 + x.abs()),
        NormalizerKind::None => x,
    }
}

/// Derivative of [`normalize`] with respect to its input.
#[inline]
pub fn normalize_deriv(x: f64, kind: NormalizerKind) -> f64 {
    match kind {
        NormalizerKind::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        NormalizerKind::Softsign => {
            let d = 1.0 + x.abs();
            1.0 / (d * d)
        }
        NormalizerKind::None => 1.0,
    }
}

/// Evenly spaced RBF centers on `[-1, 1]` with spread equal to the spacing.
///
/// A one-point grid is centered at 0 with spread 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    centers: Vec<f64>,
    spacing: f64,
}

impl GridSpec {
    pub fn new(n_points: usize) -> Result<Self> {
        match n_points {
            0 => Err(Error::InvalidSpec("grid needs at least one point".into())),
            1 => Ok(GridSpec {
                centers: vec![0.0],
                spacing: 1.0,
            }),
            n => {
                let h = 2.0 / (n - 1) as f64;
                let mut centers: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
                // pin the right end exactly
                centers[n - 1] = 1.0;
                Ok(GridSpec { centers, spacing: h })
            }
        }
    }

    pub fn n_points(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Basis values at `x`: the `N` RBFs followed by `swish(x)` when `base_on`.
    /// `out` must hold `N + base_on as usize` entries.
    #[inline]
    pub fn basis_into(&self, x: f64, base_on: bool, out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.spacing * self.spacing);
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let r = x - c;
            *o = (-(r * r) * inv).exp();
        }
        if base_on {
            out[self.centers.len()] = swish(x);
        }
    }

    /// Basis values and their derivatives with respect to `x`.
    #[inline]
    pub(crate) fn basis_and_deriv_into(
        &self,
        x: f64,
        base_on: bool,
        val: &mut [f64],
        deriv: &mut [f64],
    ) {
        let h2 = self.spacing * self.spacing;
        let inv = 1.0 / (2.0 * h2);
        for (i, &c) in self.centers.iter().enumerate() {
            let r = x - c;
            let v = (-(r * r) * inv).exp();
            val[i] = v;
            deriv[i] = -r / h2 * v;
        }
        if base_on {
            let n = self.centers.len();
            val[n] = swish(x);
            deriv[n] = swish_deriv(x);
        }
    }
}

/// Number of weights carried by one activation.
#[inline]
pub fn weights_per_activation(grid: &GridSpec, base_on: bool) -> usize {
    grid.n_points() + usize::from(base_on)
}

/// Evaluate one activation at a normalized input.
///
/// `weights` is packed `[rbf weights..., base weight]`.
pub fn phi_eval(x_norm: f64, weights: &[f64], grid: &GridSpec, base_on: bool) -> f64 {
    debug_assert_eq!(weights.len(), weights_per_activation(grid, base_on));
    let h = grid.spacing();
    let mut acc = 0.0;
    for (w, &c) in weights.iter().zip(grid.centers()) {
        acc += w * rbf_eval(x_norm - c, h);
    }
    if base_on {
        acc += weights[grid.n_points()] * swish(x_norm);
    }
    acc
}

/// Partial derivatives of one activation: `(dphi/dx, dphi/dweights)`.
pub fn phi_grad(
    x_norm: f64,
    weights: &[f64],
    grid: &GridSpec,
    base_on: bool,
) -> (f64, Vec<f64>) {
    let n = weights_per_activation(grid, base_on);
    debug_assert_eq!(weights.len(), n);
    let mut val = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    grid.basis_and_deriv_into(x_norm, base_on, &mut val, &mut deriv);
    let dx = weights.iter().zip(&deriv).map(|(w, d)| w * d).sum();
    (dx, val)
}
