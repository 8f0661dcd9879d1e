//! Layers and networks against a naive reference written straight from the
//! activation and node definitions.

use leankan::{Layer, LayerKind, LayerSpec, Network, NormalizerKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ref_normalize(x: f64, kind: NormalizerKind) -> f64 {
    match kind {
        NormalizerKind::Tanh => x.tanh(),
        NormalizerKind::Softsign => x / (1.0 + x.abs()),
        NormalizerKind::None => x,
    }
}

fn ref_phi(x: f64, w: &[f64], n: usize, base: bool) -> f64 {
    let (centers, h): (Vec<f64>, f64) = if n == 1 {
        (vec![0.0], 1.0)
    } else {
        let h = 2.0 / (n - 1) as f64;
        ((0..n).map(|i| -1.0 + i as f64 * h).collect(), h)
    };
    let mut acc = 0.0;
    for i in 0..n {
        acc += w[i] * (-(x - centers[i]).powi(2) / (2.0 * h * h)).exp();
    }
    if base {
        acc += w[n] * x / (1.0 + (-x).exp());
    }
    acc
}

fn ref_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let s = layer.spec();
    let n = s.grid.n_points();
    let stride = n + usize::from(s.base_on);
    let rows = match s.kind {
        LayerKind::Mult { n_a, k } => n_a + k * (s.n_out - n_a),
        _ => s.n_out,
    };
    let act = |r: usize, j: usize| {
        let w = &layer.weights()[(r * s.n_in + j) * stride..][..stride];
        ref_phi(ref_normalize(x[j], s.normalizer), w, n, s.base_on)
    };
    let sums: Vec<f64> = (0..rows).map(|r| (0..s.n_in).map(|j| act(r, j)).sum()).collect();
    match s.kind {
        LayerKind::Add => sums,
        LayerKind::Mult { n_a, k } => {
            let mut z = sums[..n_a].to_vec();
            for m in 0..s.n_out - n_a {
                z.push((0..k).map(|i| sums[n_a + m * k + i]).product());
            }
            z
        }
        LayerKind::Lean { n_mu } => (0..s.n_out)
            .map(|r| {
                let prod = if n_mu == 0 { 0.0 } else { (0..n_mu).map(|j| act(r, j)).product() };
                prod + (n_mu..s.n_in).map(|j| act(r, j)).sum::<f64>()
            })
            .collect(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn normalizer() -> impl Strategy<Value = NormalizerKind> {
    prop_oneof![
        Just(NormalizerKind::Tanh),
        Just(NormalizerKind::Softsign),
        Just(NormalizerKind::None)
    ]
}

/// Valid layer spec with small dimensions.
fn layer_spec() -> impl Strategy<Value = LayerSpec> {
    (1usize..5, 1usize..5, 1usize..7, normalizer(), any::<bool>(), 0usize..3, 0usize..6, 2usize..4).prop_map(
        |(n_in, n_out, grid, norm, base, which, pick, k)| {
            let kind = match which {
                0 => LayerKind::Add,
                1 => LayerKind::Mult { n_a: pick % (n_out + 1), k },
                _ => LayerKind::Lean { n_mu: pick % (n_in + 1) },
            };
            LayerSpec::new(kind, n_in, n_out, grid, norm, base).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_matches_reference(spec in layer_spec(), seed in any::<u64>(), xs in prop::collection::vec(-4.0f64..4.0, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Layer::random(spec.clone(), &mut rng);
        let x = &xs[..spec.n_in];
        let (z, _) = layer.forward(x).unwrap();
        let want = ref_forward(&layer, x);
        prop_assert_eq!(z.len(), spec.n_out);
        for (a, b) in z.iter().zip(&want) {
            prop_assert!(close(*a, *b, 1e-12), "{} vs {}", a, b);
        }
    }

    #[test]
    fn parameter_count_formula(spec in layer_spec()) {
        let rows = match spec.kind {
            LayerKind::Mult { n_a, k } => n_a + k * (spec.n_out - n_a),
            _ => spec.n_out,
        };
        let per = spec.grid.n_points() + usize::from(spec.base_on);
        prop_assert_eq!(spec.count_activations(), spec.n_in * rows);
        prop_assert_eq!(spec.count_parameters(), spec.n_in * rows * per);
        prop_assert_eq!(Layer::zeros(spec.clone()).weights().len(), spec.count_parameters());
    }

    #[test]
    fn reductions_to_add(n_in in 1usize..5, n_out in 1usize..5, grid in 1usize..6, norm in normalizer(),
                         base in any::<bool>(), seed in any::<u64>(), xs in prop::collection::vec(-5.0f64..5.0, 4)) {
        let add = LayerSpec::new(LayerKind::Add, n_in, n_out, grid, norm, base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Layer::random(add.clone(), &mut rng);
        let lean = Layer::from_weights(LayerSpec { kind: LayerKind::Lean { n_mu: 0 }, ..add.clone() }, a.weights().to_vec()).unwrap();
        let mult = Layer::from_weights(LayerSpec { kind: LayerKind::Mult { n_a: n_out, k: 2 }, ..add }, a.weights().to_vec()).unwrap();
        let x = &xs[..n_in];
        let z = a.forward(x).unwrap().0;
        prop_assert_eq!(&lean.forward(x).unwrap().0, &z);
        prop_assert_eq!(&mult.forward(x).unwrap().0, &z);
    }

    #[test]
    fn network_vjp_matches_central_difference(first in layer_spec(), second in layer_spec(), seed in any::<u64>(),
                                              xs in prop::collection::vec(-1.5f64..1.5, 4),
                                              cot in prop::collection::vec(-1.0f64..1.0, 4)) {
        // chain the second layer onto the first
        let second = LayerSpec::new(
            match second.kind {
                LayerKind::Lean { n_mu } => LayerKind::Lean { n_mu: n_mu.min(first.n_out) },
                k => k,
            },
            first.n_out, second.n_out, second.grid.n_points(), second.normalizer, second.base_on,
        ).unwrap();
        let net = Network::random(vec![first.clone(), second.clone()], seed).unwrap();
        let x = xs[..first.n_in].to_vec();
        let zbar = cot[..second.n_out].to_vec();
        let (_, cache) = net.forward(&x).unwrap();
        let (xbar, pbar) = net.vjp(&cache, &zbar).unwrap();
        let pbar = pbar.into_inner();
        let loss = |net: &Network, x: &[f64]| -> f64 {
            net.eval(x).unwrap().iter().zip(&zbar).map(|(z, c)| z * c).sum()
        };
        let eps = 1e-6;
        let params = net.flatten().into_inner();
        let mut probe = net.clone();
        let mut err: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += eps;
            probe.set_params(&p).unwrap();
            let up = loss(&probe, &x);
            p[i] -= 2.0 * eps;
            probe.set_params(&p).unwrap();
            let down = loss(&probe, &x);
            let fd = (up - down) / (2.0 * eps);
            err = err.max((fd - pbar[i]).abs() / (1.0 + fd.abs()));
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += eps;
            let up = loss(&net, &xp);
            xp[j] -= 2.0 * eps;
            let down = loss(&net, &xp);
            let fd = (up - down) / (2.0 * eps);
            err = err.max((fd - xbar[j]).abs() / (1.0 + fd.abs()));
        }
        prop_assert!(err < 1e-6, "max error {}", err);
    }

    #[test]
    fn flatten_set_params_round_trip(spec in layer_spec(), seed in any::<u64>()) {
        let net = Network::random(vec![spec.clone()], seed).unwrap();
        let p = net.flatten().into_inner();
        let mut other = Network::zeros(vec![spec]).unwrap();
        other.set_params(&p).unwrap();
        prop_assert_eq!(other, net);
    }

    #[test]
    fn model_text_round_trip_is_exact(spec in layer_spec(), seed in any::<u64>()) {
        let net = Network::random(vec![spec], seed).unwrap();
        let text = leankan::model_io::model_to_string(&net);
        let back = leankan::model_io::model_from_str(&text).unwrap();
        prop_assert_eq!(back, net);
    }
}

#[test]
fn hand_computed_activation() {
    // grid [-1, 0, 1], h = 1; x = 0 through tanh stays 0
    let spec = LayerSpec::new(LayerKind::Add, 1, 1, 3, NormalizerKind::Tanh, true).unwrap();
    let layer = Layer::from_weights(spec, vec![1.0, 2.0, 0.0, 5.0]).unwrap();
    let z = layer.forward(&[0.0]).unwrap().0[0];
    // exp(-1/2) + 2 * exp(0) + 5 * swish(0)
    assert!((z - (0.606_530_659_712_633_4 + 2.0)).abs() < 1e-15);
}

#[test]
fn hand_computed_lean_node() {
    // one lean output: phi_0(x_0) * phi_1(x_1) + phi_2(x_2), each phi a
    // single centred RBF on a one-point grid (h = 1) without base term
    let spec = LayerSpec::new(LayerKind::Lean { n_mu: 2 }, 3, 1, 1, NormalizerKind::None, false).unwrap();
    let layer = Layer::from_weights(spec, vec![2.0, 3.0, 4.0]).unwrap();
    let x = [0.0, 1.0, 0.5];
    let z = layer.forward(&x).unwrap().0[0];
    let want = 2.0 * 3.0 * (-0.5f64).exp() + 4.0 * (-0.125f64).exp();
    assert!((z - want).abs() < 1e-14);
}

#[test]
fn hand_computed_mult_node() {
    // n_a = 0, k = 2: the single output is the product of two sublayer sums
    let spec = LayerSpec::new(LayerKind::Mult { n_a: 0, k: 2 }, 1, 1, 1, NormalizerKind::None, false).unwrap();
    let layer = Layer::from_weights(spec, vec![3.0, -2.0]).unwrap();
    let z = layer.forward(&[0.0]).unwrap().0[0];
    assert_eq!(z, -6.0);
}
