use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::encoder::ViewEncoder;
use crate::data::{Cohort, ExamRecord};
use crate::error::{PhdError, Result};

/// Pools a variable number of view features into one visit embedding.
pub trait ViewAggregator: Send + Sync {
    fn aggregate(&self, views: &[Vec<f32>]) -> Result<Vec<f32>>;
}

fn check_views(views: &[Vec<f32>]) -> Result<usize> {
    let first = views
        .first()
        .ok_or_else(|| PhdError::invalid("cannot aggregate an empty view list"))?;
    let d = first.len();
    if views.iter().any(|v| v.len() != d) {
        return Err(PhdError::invalid("views differ in dimensionality"));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeanPooling;

impl ViewAggregator for MeanPooling {
    fn aggregate(&self, views: &[Vec<f32>]) -> Result<Vec<f32>> {
        let d = check_views(views)?;
        let n = views.len() as f64;
        Ok((0..d)
            .map(|c| (views.iter().map(|v| v[c] as f64).sum::<f64>() / n) as f32)
            .collect())
    }
}

/// Additive attention pooling: `a_v = u . tanh(W z_v)`, softmax over views,
/// weighted sum of view features. Order of views does not matter.
#[derive(Debug, Clone)]
pub struct AttentionPooling {
    proj: Array2<f64>,
    score: Array1<f64>,
}

impl AttentionPooling {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / dim.max(1) as f64).sqrt()).expect("finite std");
        Self {
            proj: Array2::from_shape_fn((dim, hidden), |_| normal.sample(&mut rng)),
            score: Array1::from_shape_fn(hidden, |_| normal.sample(&mut rng)),
        }
    }

    pub fn weights(&self, views: &[Vec<f32>]) -> Result<Vec<f64>> {
        let d = check_views(views)?;
        if d != self.proj.nrows() {
            return Err(PhdError::invalid(format!(
                "view dim {d} does not match pooling dim {}",
                self.proj.nrows()
            )));
        }
        let logits: Vec<f64> = views
            .iter()
            .map(|v| {
                let x = Array1::from_iter(v.iter().map(|&x| x as f64));
                x.dot(&self.proj).mapv(f64::tanh).dot(&self.score)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }
}

impl ViewAggregator for AttentionPooling {
    fn aggregate(&self, views: &[Vec<f32>]) -> Result<Vec<f32>> {
        let w = self.weights(views)?;
        let d = views[0].len();
        Ok((0..d)
            .map(|c| {
                views
                    .iter()
                    .zip(&w)
                    .map(|(v, &a)| a * v[c] as f64)
                    .sum::<f64>() as f32
            })
            .collect())
    }
}

/// Encodes every view of `exam` and pools them into its visit embedding.
pub fn embed_exam(
    exam: &ExamRecord,
    encoder: &dyn ViewEncoder,
    aggregator: &dyn ViewAggregator,
) -> Result<Vec<f32>> {
    let feats = exam
        .views
        .iter()
        .map(|v| encoder.encode(v))
        .collect::<Result<Vec<_>>>()?;
    aggregator.aggregate(&feats)
}

/// Fills visit embeddings from views for every exam that carries views.
pub fn embed_cohort_views(
    cohort: &mut Cohort,
    encoder: &dyn ViewEncoder,
    aggregator: &dyn ViewAggregator,
) -> Result<()> {
    for p in &mut cohort.patients {
        for e in &mut p.exams {
            if !e.views.is_empty() {
                e.embedding = embed_exam(e, encoder, aggregator)?;
            }
        }
    }
    cohort.dim = encoder.output_dim();
    cohort.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::encoder::IdentityEncoder;
    use proptest::prelude::*;

    #[test]
    fn mean_pooling_examples() {
        let out = MeanPooling.aggregate(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(out, vec![2.0, 2.0]);
        assert_eq!(MeanPooling.aggregate(&[vec![4.0, -1.0]]).unwrap(), vec![4.0, -1.0]);
        assert!(MeanPooling.aggregate(&[]).is_err());
        assert!(AttentionPooling::new(2, 4, 0).aggregate(&[]).is_err());
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let pool = AttentionPooling::new(3, 5, 1);
        let w = pool
            .weights(&[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.0], vec![0.0, 0.0, 2.0]])
            .unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_exam_uses_encoder_and_pooling() {
        let mut exam = ExamRecord::with_embedding(0, vec![]);
        exam.views = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]];
        let out = embed_exam(&exam, &IdentityEncoder::new(2), &MeanPooling).unwrap();
        assert_eq!(out, vec![4.0, 5.0]);
    }

    proptest! {
        #[test]
        fn attention_pooling_is_permutation_invariant(
            views in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 4), 1..5),
            seed in any::<u64>(),
            rot in 0usize..4,
        ) {
            let pool = AttentionPooling::new(4, 6, seed);
            let a = pool.aggregate(&views).unwrap();
            let mut perm = views.clone();
            perm.reverse();
            let r = rot % perm.len();
            perm.rotate_left(r);
            let b = pool.aggregate(&perm).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
