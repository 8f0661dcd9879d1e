//! Four-input product toy problem: `z = [x1 x2, x3 x4, x1 x2, x3 x4]` with
//! inputs uniform on `[0, 1]^4`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layer::LayerKind;
use crate::training::Dataset;

pub const N_TRAIN: usize = 150;
pub const N_TEST: usize = 50;

pub fn toy_target(x: &[f64]) -> Vec<f64> {
    let a = x[0] * x[1];
    let b = x[2] * x[3];
    vec![a, b, a, b]
}

/// 200 points from one seeded stream; the first 150 train, the rest test.
pub fn generate_toy(seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..N_TRAIN + N_TEST)
        .map(|_| (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect())
        .collect();
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| toy_target(x)).collect();
    let (x_train, x_test) = xs.split_at(N_TRAIN);
    let (z_train, z_test) = zs.split_at(N_TRAIN);
    (
        Dataset {
            inputs: x_train.to_vec(),
            targets: z_train.to_vec(),
        },
        Dataset {
            inputs: x_test.to_vec(),
            targets: z_test.to_vec(),
        },
    )
}

/// 1-based output indices a single layer of `kind` can represent exactly on
/// the toy target.
///
/// Mult layers can only multiply on outputs past the `n_a` identity nodes.
/// Lean layers multiply only over inputs `1..=n_mu`, so an output is reachable
/// when both of its target factors fall in that group.
pub fn learnable_outputs(kind: LayerKind, n_in: usize, n_out: usize) -> Result<BTreeSet<usize>> {
    if n_in != 4 || n_out != 4 {
        return Err(Error::NoStaticAnswer(format!(
            "{kind} with {n_in} inputs and {n_out} outputs (only the 4->4 toy layer is characterized)"
        )));
    }
    // factor pairs of each target output
    let factors = [(1, 2), (3, 4), (1, 2), (3, 4)];
    Ok(match kind {
        LayerKind::Add => BTreeSet::new(),
        LayerKind::Mult { n_a, k: 2 } => (n_a + 1..=n_out).collect(),
        LayerKind::Mult { .. } => {
            return Err(Error::NoStaticAnswer(format!("{kind}: only k = 2 is characterized")))
        }
        LayerKind::Lean { n_mu } => factors
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a <= n_mu && b <= n_mu)
            .map(|(i, _)| i + 1)
            .collect(),
    })
}
