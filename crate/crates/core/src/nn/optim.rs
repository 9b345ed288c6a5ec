use std::f64::consts::PI;

use super::graph::Mat;
use super::params::ParamStore;

/// Adam with bias correction, optional global-norm gradient clipping and
/// decoupled weight decay on weight matrices (tensors with more than one row).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, v)| Mat::zeros(v.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
            weight_decay: 0.0,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>], lr: f64) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let mut scale = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = grads
                .iter()
                .flatten()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.value_mut(id);
            let decay = if p.nrows() > 1 { 1.0 - lr * self.weight_decay } else { 1.0 };
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p = *p * decay - lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Cosine-annealed learning rate for `epoch` in `0..total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    0.5 * base * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 30), 1e-3);
        assert!((cosine_lr(1e-3, 15, 30) - 5e-4).abs() < 1e-15);
        assert!(cosine_lr(1e-3, 29, 30) > 0.0);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let g = store.value(id) * 2.0;
            opt.step(&mut store, &[Some(g)], 1e-2);
        }
        assert!(store.value(id).iter().all(|x| x.abs() < 1e-2));
    }
}
