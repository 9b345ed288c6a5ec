use rand::Rng;

use super::graph::{Graph, Mat, Var};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add_const(format!("{name}.bias"), 1, out_dim, 0.0);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_const(format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.add_const(format!("{name}.beta"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Inverted dropout; identity when `rng` is `None` (eval mode) or `p == 0`.
pub fn dropout<R: Rng>(g: &mut Graph, x: Var, p: f64, rng: Option<&mut R>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let dim = g.value(x).dim();
            let mask = Mat::from_shape_fn(dim, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
            g.mask(x, mask)
        }
        _ => x,
    }
}
