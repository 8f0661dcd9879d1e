//! Layer stacks and their flat parameter view.
//!
//! The flat layout is layer-major, then sublayer row, then input, then the
//! packed activation weights `[rbf..., base]`. It is simply the concatenation
//! of every layer's weight storage.

use std::ops::{Deref, DerefMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::NormalizerKind;
use crate::error::{Error, Result};
use crate::layer::{Layer, LayerCache, LayerKind, LayerSpec};

/// All trainable weights of a network in flat order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Named two-layer (or single-layer) architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    /// One layer of the given kind.
    Single(LayerKind),
    /// `Add n_in -> hidden; Add hidden -> n_out`.
    AddAdd { hidden: usize },
    /// `Mult n_in -> hidden; Add hidden -> n_out`.
    MultFirst { hidden: usize, n_a: usize, k: usize },
    /// `Add n_in -> hidden; Lean hidden -> n_out`.
    LeanSecond { hidden: usize, n_mu: usize },
}

impl Template {
    pub fn layer_specs(
        &self,
        n_in: usize,
        n_out: usize,
        grid_points: usize,
        normalizer: NormalizerKind,
        base_on: bool,
    ) -> Result<Vec<LayerSpec>> {
        let mk = |kind, a, b| LayerSpec::new(kind, a, b, grid_points, normalizer, base_on);
        Ok(match *self {
            Template::Single(kind) => vec![mk(kind, n_in, n_out)?],
            Template::AddAdd { hidden } => {
                vec![mk(LayerKind::Add, n_in, hidden)?, mk(LayerKind::Add, hidden, n_out)?]
            }
            Template::MultFirst { hidden, n_a, k } => vec![
                mk(LayerKind::Mult { n_a, k }, n_in, hidden)?,
                mk(LayerKind::Add, hidden, n_out)?,
            ],
            Template::LeanSecond { hidden, n_mu } => vec![
                mk(LayerKind::Add, n_in, hidden)?,
                mk(LayerKind::Lean { n_mu }, hidden, n_out)?,
            ],
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Template::Single(_) => "single",
            Template::AddAdd { .. } => "add-add",
            Template::MultFirst { .. } => "mult-first",
            Template::LeanSecond { .. } => "lean-second",
        }
    }
}

/// Per-layer forward intermediates.
#[derive(Debug, Clone)]
pub struct NetCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (a, b) = (pair[0].spec(), pair[1].spec());
            if a.n_out != b.n_in {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    a.n_out,
                    i + 1,
                    b.n_in
                )));
            }
        }
        Ok(Network { layers })
    }

    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        Network::new(specs.into_iter().map(Layer::zeros).collect())
    }

    /// Random weights from a ChaCha8 stream seeded with `seed`.
    pub fn random(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(specs.into_iter().map(|s| Layer::random(s, &mut rng)).collect())
    }

    pub fn from_template(
        n_in: usize,
        n_out: usize,
        template: &Template,
        grid_points: usize,
        normalizer: NormalizerKind,
        base_on: bool,
        seed: u64,
    ) -> Result<Self> {
        Network::random(
            template.layer_specs(n_in, n_out, grid_points, normalizer, base_on)?,
            seed,
        )
    }

    /// Rebuild a network from specs and a flat parameter vector.
    pub fn unflatten(specs: Vec<LayerSpec>, params: &[f64]) -> Result<Self> {
        let expected: usize = specs.iter().map(LayerSpec::count_parameters).sum();
        if params.len() != expected {
            return Err(Error::Shape {
                context: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let n = spec.count_parameters();
            layers.push(Layer::from_weights(spec, params[offset..offset + n].to_vec())?);
            offset += n;
        }
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].spec().n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].spec().n_out
    }

    pub fn total_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.spec().count_parameters()).sum()
    }

    pub fn total_activations(&self) -> usize {
        self.layers.iter().map(|l| l.spec().count_activations()).sum()
    }

    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.total_parameters());
        for l in &self.layers {
            v.extend_from_slice(l.weights());
        }
        ParamVector(v)
    }

    /// Overwrite all weights from a flat vector.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.total_parameters();
        if params.len() != expected {
            return Err(Error::Shape {
                context: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weights_mut();
            let n = w.len();
            w.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, NetCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let (z, c) = l.forward(&h)?;
            caches.push(c);
            h = z;
        }
        Ok((h, NetCache { layers: caches }))
    }

    /// Forward pass without keeping intermediates.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    pub fn vjp(&self, cache: &NetCache, z_bar: &[f64]) -> Result<(Vec<f64>, ParamVector)> {
        let mut grad = ParamVector::zeros(self.total_parameters());
        let x_bar = self.vjp_accumulate(cache, z_bar, &mut grad)?;
        Ok((x_bar, grad))
    }

    /// Reverse sweep adding parameter gradients into `grad`; returns `dL/dx`.
    pub fn vjp_accumulate(
        &self,
        cache: &NetCache,
        z_bar: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::CacheMismatch(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if grad.len() != self.total_parameters() {
            return Err(Error::Shape {
                context: "gradient buffer",
                expected: self.total_parameters(),
                got: grad.len(),
            });
        }
        let mut end = grad.len();
        let mut bar = z_bar.to_vec();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let n = l.weights().len();
            let mut x_bar = vec![0.0; l.spec().n_in];
            l.vjp_accumulate(c, &bar, &mut x_bar, &mut grad[end - n..end])?;
            end -= n;
            bar = x_bar;
        }
        Ok(bar)
    }
}
