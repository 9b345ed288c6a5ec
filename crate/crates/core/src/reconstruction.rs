//! History reconstruction: predicts each prior-year visit embedding from the
//! current one, supervised by a masked mean-squared feature loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{SlotSource, VisitEmbedding};
use crate::error::{PhdError, Result};
use crate::nn::{dropout, Graph, Linear, Mat, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub dropout: f64,
    /// One trunk shared by all offsets; otherwise each offset gets its own.
    pub shared_trunk: bool,
    /// Predict `x0 + f(x0)` instead of `f(x0)`.
    pub residual: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dropout: 0.1,
            shared_trunk: true,
            residual: true,
        }
    }
}

/// Three fully connected layers per offset: two trunk layers with ReLU and
/// dropout, then an offset-specific output layer back to dimension `dim`.
#[derive(Debug, Clone)]
pub struct HistoryPredictor {
    pub dim: usize,
    pub history_len: usize,
    pub config: PredictorConfig,
    trunks: Vec<[Linear; 2]>,
    heads: Vec<Linear>,
}

impl HistoryPredictor {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        history_len: usize,
        config: PredictorConfig,
        rng: &mut R,
    ) -> Self {
        let n_trunks = if config.shared_trunk { 1 } else { history_len };
        let trunks = (0..n_trunks)
            .map(|t| {
                [
                    Linear::new(store, &format!("predictor.trunk{t}.fc1"), dim, config.hidden, rng),
                    Linear::new(store, &format!("predictor.trunk{t}.fc2"), config.hidden, config.hidden, rng),
                ]
            })
            .collect();
        let heads = (0..history_len)
            .map(|t| Linear::new(store, &format!("predictor.head{}", t + 1), config.hidden, dim, rng))
            .collect();
        Self {
            dim,
            history_len,
            config,
            trunks,
            heads,
        }
    }

    fn trunk<R: Rng>(
        &self,
        idx: usize,
        g: &mut Graph,
        store: &ParamStore,
        x0: Var,
        rng: &mut Option<&mut R>,
    ) -> Var {
        let p = self.config.dropout;
        let [fc1, fc2] = &self.trunks[idx];
        let h = fc1.forward(g, store, x0);
        let h = g.relu(h);
        let h = dropout(g, h, p, rng.as_deref_mut());
        let h = fc2.forward(g, store, h);
        let h = g.relu(h);
        dropout(g, h, p, rng.as_deref_mut())
    }

    /// One `B x dim` reconstruction per prior slot. Dropout is active only
    /// when `rng` is given.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x0: Var,
        mut rng: Option<&mut R>,
    ) -> Vec<Var> {
        let shared = self
            .config
            .shared_trunk
            .then(|| self.trunk(0, g, store, x0, &mut rng));
        (0..self.history_len)
            .map(|t| {
                let h = match shared {
                    Some(h) => h,
                    None => self.trunk(t, g, store, x0, &mut rng),
                };
                let out = self.heads[t].forward(g, store, h);
                if self.config.residual {
                    g.add(out, x0)
                } else {
                    out
                }
            })
            .collect()
    }

    /// Eval-mode reconstruction of years `-1..=-T_h` from one embedding.
    pub fn reconstruct_history(
        &self,
        store: &ParamStore,
        x0: &VisitEmbedding,
    ) -> Result<Vec<(VisitEmbedding, SlotSource)>> {
        if x0.vector.len() != self.dim {
            return Err(PhdError::invalid(format!(
                "embedding has dim {}, predictor expects {}",
                x0.vector.len(),
                self.dim
            )));
        }
        if x0.vector.iter().any(|v| !v.is_finite()) {
            return Err(PhdError::invalid("non-finite embedding"));
        }
        let row = Mat::from_shape_fn((1, self.dim), |(_, c)| x0.vector[c] as f64);
        let mut g = Graph::new();
        let x = g.input(row);
        let outs = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, store, x, None);
        Ok(outs
            .iter()
            .enumerate()
            .map(|(t, v)| {
                let vector = g.value(*v).row(0).iter().map(|&x| x as f32).collect();
                (
                    VisitEmbedding {
                        vector,
                        relative_year: -(t as i32 + 1),
                    },
                    SlotSource::Reconstructed,
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureKd {
    pub loss: f64,
    /// Number of supervised slots; zero means there was no history to match.
    pub available: usize,
}

impl FeatureKd {
    pub fn unsupervised(&self) -> bool {
        self.available == 0
    }
}

/// `(1/T_eff) * sum_t ||x^t - xhat^t||^2` over available slots.
pub fn feature_kd_loss(targets: &[Vec<f64>], predicted: &[Vec<f64>], mask: &[bool]) -> Result<FeatureKd> {
    if targets.len() != predicted.len() || targets.len() != mask.len() {
        return Err(PhdError::invalid("feature KD inputs differ in slot count"));
    }
    let available = mask.iter().filter(|m| **m).count();
    if available == 0 {
        return Ok(FeatureKd { loss: 0.0, available });
    }
    let mut total = 0.0;
    for ((t, p), &m) in targets.iter().zip(predicted).zip(mask) {
        if !m {
            continue;
        }
        if t.len() != p.len() {
            return Err(PhdError::invalid("feature KD vectors differ in dimension"));
        }
        total += t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(FeatureKd {
        loss: total / available as f64,
        available,
    })
}

/// Closed-form gradient of [`feature_kd_loss`] with respect to each prediction.
pub fn feature_kd_grad(targets: &[Vec<f64>], predicted: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    let t_eff = mask.iter().filter(|m| **m).count();
    targets
        .iter()
        .zip(predicted)
        .zip(mask)
        .map(|((t, p), &m)| {
            p.iter()
                .zip(t)
                .map(|(p, t)| if m { 2.0 * (p - t) / t_eff as f64 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Batch feature-KD node: per-sample loss averaged over samples that have
/// at least one true prior. Returns `None` when no sample has any.
pub fn feature_kd_node(g: &mut Graph, predicted: &[Var], targets: &[Mat], available: &[Vec<bool>]) -> Option<Var> {
    let n = targets.first()?.nrows();
    let t_eff: Vec<usize> = (0..n)
        .map(|r| available.iter().filter(|a| a[r]).count())
        .collect();
    let n_eff = t_eff.iter().filter(|&&t| t > 0).count();
    if n_eff == 0 {
        return None;
    }
    let terms: Vec<(Var, f64)> = predicted
        .iter()
        .zip(targets)
        .zip(available)
        .map(|((&p, t), a)| {
            let coef = (0..n)
                .map(|r| {
                    if a[r] {
                        1.0 / (t_eff[r] as f64 * n_eff as f64)
                    } else {
                        0.0
                    }
                })
                .collect();
            (g.sq_err(p, t.clone(), coef), 1.0)
        })
        .collect();
    Some(g.combine(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_examples() {
        let x = vec![vec![1.0, 2.0]; 4];
        assert_eq!(feature_kd_loss(&x, &x, &[true; 4]).unwrap().loss, 0.0);
        let mut y = x.clone();
        y[2][0] += 1.0;
        assert_eq!(feature_kd_loss(&x, &y, &[true; 4]).unwrap().loss, 0.25);
        let none = feature_kd_loss(&x, &y, &[false; 4]).unwrap();
        assert!(none.unsupervised());
        assert_eq!(none.loss, 0.0);
        assert!(feature_kd_loss(&x, &y[..3], &[true; 4]).is_err());
    }

    #[test]
    fn loss_ignores_slot_order() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![vec![0.5], vec![2.5], vec![4.0]];
        let m = [true, false, true];
        let a = feature_kd_loss(&x, &y, &m).unwrap().loss;
        let (mut xr, mut yr, mut mr) = (x.clone(), y.clone(), m.to_vec());
        xr.reverse();
        yr.reverse();
        mr.reverse();
        assert_eq!(a, feature_kd_loss(&xr, &yr, &mr).unwrap().loss);
    }

    #[test]
    fn reconstruction_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let pred = HistoryPredictor::new(&mut store, 6, 4, PredictorConfig::default(), &mut rng);
        let x0 = VisitEmbedding {
            vector: vec![0.3, -1.0, 0.2, 0.0, 1.5, -0.7],
            relative_year: 0,
        };
        let a = pred.reconstruct_history(&store, &x0).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|(v, s)| v.vector.len() == 6 && *s == SlotSource::Reconstructed));
        assert_eq!(a, pred.reconstruct_history(&store, &x0).unwrap());
        let bad = VisitEmbedding {
            vector: vec![0.0; 5],
            relative_year: 0,
        };
        assert!(pred.reconstruct_history(&store, &bad).is_err());
    }

    #[test]
    fn graph_node_matches_scalar_loss() {
        let mut g = Graph::new();
        let p0 = g.input(Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let p1 = g.input(Mat::from_shape_vec((2, 2), vec![0.0, 2.0, 1.0, 1.0]).unwrap());
        let t = vec![Mat::zeros((2, 2)), Mat::zeros((2, 2))];
        let avail = vec![vec![true, false], vec![true, false]];
        let node = feature_kd_node(&mut g, &[p0, p1], &t, &avail).unwrap();
        let scalar = feature_kd_loss(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![1.0, 0.0], vec![0.0, 2.0]],
            &[true, true],
        )
        .unwrap();
        assert!((g.scalar(node) - scalar.loss).abs() < 1e-15);
        let none = vec![vec![false, false], vec![false, false]];
        assert!(feature_kd_node(&mut g, &[p0, p1], &t, &none).is_none());
    }
}
