//! The three KAN layer variants.
//!
//! All variants first normalize the input vector, then evaluate a matrix of
//! activations `phi[s][j](x_j)` with `s` running over the sublayer and `j`
//! over the inputs. They differ only in how that matrix is reduced:
//!
//! * `Add`: `z_s = sum_j phi[s][j]`.
//! * `Mult { n_a, k }`: the sublayer `y_s = sum_j phi[s][j]` has width
//!   `n_a + k * (n_out - n_a)`. The first `n_a` entries pass through; every
//!   remaining output is the product of the next `k` consecutive entries.
//! * `Lean { n_mu }`: `z_o = prod_{j < n_mu} phi[o][j] + sum_{j >= n_mu} phi[o][j]`,
//!   with the product taken as absent (not 1) when `n_mu == 0`.
//!
//! Weights are stored `[sublayer row][input][rbf..., base]`.

use rand::Rng;

use crate::basis::{normalize, normalize_deriv, weights_per_activation, GridSpec, NormalizerKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Add,
    Mult { n_a: usize, k: usize },
    Lean { n_mu: usize },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Add => "add",
            LayerKind::Mult { .. } => "mult",
            LayerKind::Lean { .. } => "lean",
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerKind::Add => write!(f, "add"),
            LayerKind::Mult { n_a, k } => write!(f, "mult(n_a={n_a},k={k})"),
            LayerKind::Lean { n_mu } => write!(f, "lean(n_mu={n_mu})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub n_in: usize,
    pub n_out: usize,
    pub grid: GridSpec,
    pub normalizer: NormalizerKind,
    pub base_on: bool,
}

impl LayerSpec {
    pub fn new(
        kind: LayerKind,
        n_in: usize,
        n_out: usize,
        grid_points: usize,
        normalizer: NormalizerKind,
        base_on: bool,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidSpec(format!(
                "layer dimensions must be positive, got {n_in} -> {n_out}"
            )));
        }
        match kind {
            LayerKind::Add => {}
            LayerKind::Mult { n_a, k } => {
                if n_a > n_out {
                    return Err(Error::InvalidSpec(format!(
                        "mult layer has n_a = {n_a} > n_out = {n_out}"
                    )));
                }
                if k < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "mult layer needs k >= 2, got {k}"
                    )));
                }
            }
            LayerKind::Lean { n_mu } => {
                if n_mu > n_in {
                    return Err(Error::InvalidSpec(format!(
                        "lean layer has n_mu = {n_mu} > n_in = {n_in}"
                    )));
                }
            }
        }
        Ok(LayerSpec {
            kind,
            n_in,
            n_out,
            grid: GridSpec::new(grid_points)?,
            normalizer,
            base_on,
        })
    }

    /// Width of the activation matrix's row dimension.
    pub fn sublayer_width(&self) -> usize {
        match self.kind {
            LayerKind::Add | LayerKind::Lean { .. } => self.n_out,
            LayerKind::Mult { n_a, k } => n_a + k * (self.n_out - n_a),
        }
    }

    pub fn weights_per_activation(&self) -> usize {
        weights_per_activation(&self.grid, self.base_on)
    }

    pub fn count_activations(&self) -> usize {
        self.n_in * self.sublayer_width()
    }

    pub fn count_parameters(&self) -> usize {
        self.count_activations() * self.weights_per_activation()
    }
}

pub fn count_activations(spec: &LayerSpec) -> usize {
    spec.count_activations()
}

pub fn count_parameters(spec: &LayerSpec) -> usize {
    spec.count_parameters()
}

/// Intermediates of one forward pass, consumed by [`Layer::vjp`].
#[derive(Debug, Clone)]
pub struct LayerCache {
    kind: LayerKind,
    n_in: usize,
    n_sub: usize,
    stride: usize,
    x: Vec<f64>,
    basis: Vec<f64>,
    dbasis: Vec<f64>,
    // activation values, kept only for lean layers
    phi: Vec<f64>,
    // sublayer sums, kept only for mult layers
    y: Vec<f64>,
}

/// A layer spec together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    weights: Vec<f64>,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        let n = spec.count_parameters();
        Layer {
            spec,
            weights: vec![0.0; n],
        }
    }

    pub fn from_weights(spec: LayerSpec, weights: Vec<f64>) -> Result<Self> {
        let expected = spec.count_parameters();
        if weights.len() != expected {
            return Err(Error::Shape {
                context: "layer weights",
                expected,
                got: weights.len(),
            });
        }
        Ok(Layer { spec, weights })
    }

    /// RBF weights uniform in `(-1/sqrt(N), 1/sqrt(N))`, base weights uniform
    /// in `(-0.5, 0.5)`, drawn in storage order.
    pub fn random<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let n = spec.grid.n_points();
        let s = 1.0 / (n as f64).sqrt();
        let stride = spec.weights_per_activation();
        let mut weights = Vec::with_capacity(spec.count_parameters());
        for _ in 0..spec.count_activations() {
            for _ in 0..n {
                weights.push(rng.gen_range(-s..s));
            }
            if stride > n {
                weights.push(rng.gen_range(-0.5..0.5));
            }
        }
        Layer { spec, weights }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Packed weights of the activation at sublayer row `row`, input `input`.
    pub fn activation_weights(&self, row: usize, input: usize) -> &[f64] {
        let stride = self.spec.weights_per_activation();
        let start = (row * self.spec.n_in + input) * stride;
        &self.weights[start..start + stride]
    }

    pub fn activation_weights_mut(&mut self, row: usize, input: usize) -> &mut [f64] {
        let stride = self.spec.weights_per_activation();
        let start = (row * self.spec.n_in + input) * stride;
        &mut self.weights[start..start + stride]
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        let spec = &self.spec;
        if x.len() != spec.n_in {
            return Err(Error::Shape {
                context: "layer input",
                expected: spec.n_in,
                got: x.len(),
            });
        }
        let n_in = spec.n_in;
        let n_sub = spec.sublayer_width();
        let stride = spec.weights_per_activation();

        let mut basis = vec![0.0; n_in * stride];
        let mut dbasis = vec![0.0; n_in * stride];
        for (j, &xj) in x.iter().enumerate() {
            let xn = normalize(xj, spec.normalizer);
            spec.grid.basis_and_deriv_into(
                xn,
                spec.base_on,
                &mut basis[j * stride..(j + 1) * stride],
                &mut dbasis[j * stride..(j + 1) * stride],
            );
        }

        let mut cache = LayerCache {
            kind: spec.kind,
            n_in,
            n_sub,
            stride,
            x: x.to_vec(),
            basis,
            dbasis,
            phi: Vec::new(),
            y: Vec::new(),
        };

        let z = match spec.kind {
            LayerKind::Add => self.row_sums(&cache.basis),
            LayerKind::Mult { n_a, k } => {
                let y = self.row_sums(&cache.basis);
                let mut z = Vec::with_capacity(spec.n_out);
                z.extend_from_slice(&y[..n_a]);
                for block in y[n_a..].chunks_exact(k) {
                    z.push(block.iter().product());
                }
                cache.y = y;
                z
            }
            LayerKind::Lean { n_mu } => {
                let phi = self.activation_values(&cache.basis);
                let z = phi
                    .chunks_exact(n_in)
                    .map(|row| {
                        let add: f64 = row[n_mu..].iter().sum();
                        if n_mu == 0 {
                            add
                        } else {
                            row[..n_mu].iter().product::<f64>() + add
                        }
                    })
                    .collect();
                cache.phi = phi;
                z
            }
        };
        Ok((z, cache))
    }

    fn expect_kind(&self, want: &'static str) -> Result<()> {
        if self.spec.kind.tag() != want {
            return Err(Error::InvalidSpec(format!(
                "expected a {want} layer, found {}",
                self.spec.kind
            )));
        }
        Ok(())
    }

    pub fn forward_add(&self, x: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        self.expect_kind("add")?;
        self.forward(x)
    }

    pub fn forward_mult(&self, x: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        self.expect_kind("mult")?;
        self.forward(x)
    }

    pub fn forward_lean(&self, x: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        self.expect_kind("lean")?;
        self.forward(x)
    }

    fn activation_values(&self, basis: &[f64]) -> Vec<f64> {
        let n_in = self.spec.n_in;
        let stride = self.spec.weights_per_activation();
        self.weights
            .chunks_exact(stride)
            .enumerate()
            .map(|(a, w)| {
                let j = a % n_in;
                dot(w, &basis[j * stride..(j + 1) * stride])
            })
            .collect()
    }

    fn row_sums(&self, basis: &[f64]) -> Vec<f64> {
        let n_in = self.spec.n_in;
        let stride = self.spec.weights_per_activation();
        self.weights
            .chunks_exact(n_in * stride)
            .map(|row| {
                row.chunks_exact(stride)
                    .zip(basis.chunks_exact(stride))
                    .map(|(w, b)| dot(w, b))
                    .sum()
            })
            .collect()
    }

    fn check_cache(&self, cache: &LayerCache) -> Result<()> {
        let spec = &self.spec;
        if cache.kind != spec.kind
            || cache.n_in != spec.n_in
            || cache.n_sub != spec.sublayer_width()
            || cache.stride != spec.weights_per_activation()
        {
            return Err(Error::CacheMismatch(format!(
                "cache built for {} {}x{} (stride {}), layer is {} {}x{} (stride {})",
                cache.kind,
                cache.n_in,
                cache.n_sub,
                cache.stride,
                spec.kind,
                spec.n_in,
                spec.sublayer_width(),
                spec.weights_per_activation()
            )));
        }
        Ok(())
    }

    /// Reverse-mode pass: returns `(dL/dx, dL/dweights)` given `dL/dz`.
    pub fn vjp(&self, cache: &LayerCache, z_bar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x_bar = vec![0.0; self.spec.n_in];
        let mut w_bar = vec![0.0; self.weights.len()];
        self.vjp_accumulate(cache, z_bar, &mut x_bar, &mut w_bar)?;
        Ok((x_bar, w_bar))
    }

    /// Like [`Layer::vjp`] but adds into caller-provided buffers.
    pub fn vjp_accumulate(
        &self,
        cache: &LayerCache,
        z_bar: &[f64],
        x_bar: &mut [f64],
        w_bar: &mut [f64],
    ) -> Result<()> {
        self.check_cache(cache)?;
        let spec = &self.spec;
        if z_bar.len() != spec.n_out {
            return Err(Error::Shape {
                context: "layer output cotangent",
                expected: spec.n_out,
                got: z_bar.len(),
            });
        }
        if x_bar.len() != spec.n_in || w_bar.len() != self.weights.len() {
            return Err(Error::Shape {
                context: "layer gradient buffers",
                expected: spec.n_in + self.weights.len(),
                got: x_bar.len() + w_bar.len(),
            });
        }
        let n_in = spec.n_in;
        let stride = cache.stride;

        // cotangent of every activation value, row-major [sub][in]
        let mut phi_bar = vec![0.0; cache.n_sub * n_in];
        match spec.kind {
            LayerKind::Add => {
                for (row, &zb) in phi_bar.chunks_exact_mut(n_in).zip(z_bar) {
                    row.fill(zb);
                }
            }
            LayerKind::Mult { n_a, k } => {
                let mut y_bar = vec![0.0; cache.n_sub];
                y_bar[..n_a].copy_from_slice(&z_bar[..n_a]);
                for (m, &zb) in z_bar[n_a..].iter().enumerate() {
                    let start = n_a + m * k;
                    let block = &cache.y[start..start + k];
                    for i in 0..k {
                        let others: f64 = block
                            .iter()
                            .enumerate()
                            .filter(|&(q, _)| q != i)
                            .map(|(_, v)| v)
                            .product();
                        y_bar[start + i] = zb * others;
                    }
                }
                for (row, &yb) in phi_bar.chunks_exact_mut(n_in).zip(&y_bar) {
                    row.fill(yb);
                }
            }
            LayerKind::Lean { n_mu } => {
                let mut prefix = vec![1.0; n_mu + 1];
                for ((row_bar, row), &zb) in phi_bar
                    .chunks_exact_mut(n_in)
                    .zip(cache.phi.chunks_exact(n_in))
                    .zip(z_bar)
                {
                    for j in 0..n_mu {
                        prefix[j + 1] = prefix[j] * row[j];
                    }
                    let mut suffix = 1.0;
                    for j in (0..n_mu).rev() {
                        row_bar[j] = zb * prefix[j] * suffix;
                        suffix *= row[j];
                    }
                    row_bar[n_mu..].fill(zb);
                }
            }
        }

        let mut xn_bar = vec![0.0; n_in];
        for (a, (&pb, w)) in phi_bar
            .iter()
            .zip(self.weights.chunks_exact(stride))
            .enumerate()
        {
            if pb == 0.0 {
                continue;
            }
            let j = a % n_in;
            let b = &cache.basis[j * stride..(j + 1) * stride];
            let db = &cache.dbasis[j * stride..(j + 1) * stride];
            for (g, &bv) in w_bar[a * stride..(a + 1) * stride].iter_mut().zip(b) {
                *g += pb * bv;
            }
            xn_bar[j] += pb * dot(w, db);
        }
        for ((xb, &xnb), &xj) in x_bar.iter_mut().zip(&xn_bar).zip(&cache.x) {
            *xb += xnb * normalize_deriv(xj, spec.normalizer);
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}
