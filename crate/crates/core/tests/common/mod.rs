//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod fixtures;
pub mod grad_cases;
pub mod oracles;

use ndarray::Array2;
use phd_core::data::LabelVector;
use phd_core::nn::{Graph, Mat, ParamId, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

/// Relative error `|a - n| / (|a| + |n|)` over the full gradient vector.
pub fn check<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss).params(store.len());
    let ids: Vec<ParamId> = store.ids().collect();
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for (i, id) in ids.into_iter().enumerate() {
        let shape = store.value(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.value(id)[[r, c]];
                store.value_mut(id)[[r, c]] = orig + h;
                let mut g1 = Graph::new();
                let l1 = build(&mut g1, store);
                let up = g1.scalar(l1);
                store.value_mut(id)[[r, c]] = orig - h;
                let mut g2 = Graph::new();
                let l2 = build(&mut g2, store);
                let down = g2.scalar(l2);
                store.value_mut(id)[[r, c]] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads[i].as_ref().map_or(0.0, |m| m[[r, c]]);
                diff += (ana - num).powi(2);
                norm += ana.abs().powi(2) + num.abs().powi(2);
            }
        }
    }
    if norm == 0.0 {
        0.0
    } else {
        diff.sqrt() / norm.sqrt()
    }
}

/// Adds small noise to every parameter so that no ReLU sits exactly on its
/// kink (zero-initialised biases otherwise put dead rows right at it).
pub fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).dim();
        let noise = randn(rng, r, c) * 0.1;
        *store.value_mut(id) += &noise;
    }
}

/// A valid label vector: `zeros` known negatives, then either the event
/// (ones) or censoring (masked) for the remaining horizons.
pub fn random_labels(rng: &mut ChaCha8Rng, k: usize) -> LabelVector {
    let zeros = rng.random_range(0..=k);
    let tail: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let v = (0..k).map(|j| if j < zeros { 0 } else { tail }).collect();
    LabelVector::new(v).unwrap()
}

/// Central finite-difference gradient of a scalar function of a vector.
pub fn numeric_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}
