use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, MASKED};
use crate::error::{PhdError, Result};
use crate::nn::{Graph, Mat, Var};

fn check_lengths(p: &[f64], y: &[i8], w: &[f64]) -> Result<()> {
    if p.len() != y.len() || p.len() != w.len() {
        return Err(PhdError::invalid(format!(
            "rce inputs differ in length: {} predictions, {} labels, {} weights",
            p.len(),
            y.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Masked, positively re-weighted binary cross-entropy over horizons,
/// normalised by the number of unmasked horizons.
pub fn rce_loss(p: &[f64], y: &[i8], w: &[f64]) -> Result<f64> {
    check_lengths(p, y, w)?;
    let mut total = 0.0;
    let mut m = 0usize;
    for k in 0..p.len() {
        match y[k] {
            MASKED => continue,
            1 => total -= w[k] * p[k].ln(),
            _ => total -= (1.0 - p[k]).ln(),
        }
        m += 1;
    }
    if m == 0 {
        return Err(PhdError::DegenerateSample);
    }
    Ok(total / m as f64)
}

/// Analytic gradient of [`rce_loss`] with respect to the predictions.
pub fn rce_grad(p: &[f64], y: &[i8], w: &[f64]) -> Result<Vec<f64>> {
    check_lengths(p, y, w)?;
    let m = y.iter().filter(|&&v| v != MASKED).count();
    if m == 0 {
        return Err(PhdError::DegenerateSample);
    }
    Ok((0..p.len())
        .map(|k| match y[k] {
            MASKED => 0.0,
            1 => -w[k] / p[k] / m as f64,
            _ => 1.0 / (1.0 - p[k]) / m as f64,
        })
        .collect())
}

/// Batch RCE node: the mean of per-sample losses over non-degenerate rows.
/// Returns the node and the number of rows dropped as degenerate, or `None`
/// when every row is degenerate.
pub fn rce_node(g: &mut Graph, p: Var, labels: &[LabelVector], weights: &[f64]) -> Option<(Var, usize)> {
    let (n, k) = g.value(p).dim();
    assert_eq!(labels.len(), n);
    let mut coef_pos = Mat::zeros((n, k));
    let mut coef_neg = Mat::zeros((n, k));
    let counts: Vec<usize> = labels
        .iter()
        .map(|l| l.as_slice().iter().filter(|&&y| y != MASKED).count())
        .collect();
    let n_eff = counts.iter().filter(|&&c| c > 0).count();
    if n_eff == 0 {
        return None;
    }
    for (r, l) in labels.iter().enumerate() {
        if counts[r] == 0 {
            continue;
        }
        let norm = 1.0 / (counts[r] as f64 * n_eff as f64);
        for (j, &y) in l.as_slice().iter().enumerate() {
            match y {
                1 => coef_pos[[r, j]] = weights[j] * norm,
                0 => coef_neg[[r, j]] = norm,
                _ => {}
            }
        }
    }
    Some((g.bce(p, coef_pos, coef_neg), n - n_eff))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosWeights {
    pub weights: Vec<f64>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Horizons whose weight hit the cap because they had no positives.
    pub capped: Vec<usize>,
}

/// `w_k = negatives_k / positives_k` over the given (training) labels,
/// capped at `max_weight` when a horizon has no positives.
pub fn compute_pos_weights(labels: &[LabelVector], horizons: usize, max_weight: f64) -> Result<PosWeights> {
    let mut positives = vec![0usize; horizons];
    let mut negatives = vec![0usize; horizons];
    for l in labels {
        if l.horizons() != horizons {
            return Err(PhdError::invalid("label vectors differ in horizon count"));
        }
        for (k, &y) in l.as_slice().iter().enumerate() {
            match y {
                1 => positives[k] += 1,
                0 => negatives[k] += 1,
                _ => {}
            }
        }
    }
    let mut capped = Vec::new();
    let mut weights = Vec::with_capacity(horizons);
    for k in 0..horizons {
        if positives[k] + negatives[k] == 0 {
            return Err(PhdError::invalid(format!(
                "horizon {} has no unmasked training labels",
                k + 1
            )));
        }
        let w = if positives[k] == 0 {
            warn!("horizon {} has no positives; weight capped at {max_weight}", k + 1);
            capped.push(k);
            max_weight
        } else {
            (negatives[k] as f64 / positives[k] as f64).min(max_weight)
        };
        weights.push(w);
    }
    Ok(PosWeights {
        weights,
        positives,
        negatives,
        capped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[i8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_value() {
        let l = rce_loss(&[0.5, 0.9], &[1, -1], &[2.0, 7.0]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_approaches_zero() {
        let l = rce_loss(&[1.0 - 1e-12, 0.3], &[1, -1], &[3.0, 1.0]).unwrap();
        assert!(l < 1e-10);
    }

    #[test]
    fn masked_horizons_are_inert() {
        let y = [0, 1, -1];
        let w = [1.0, 2.0, 3.0];
        let a = rce_loss(&[0.2, 0.6, 0.1], &y, &w).unwrap();
        let b = rce_loss(&[0.2, 0.6, 0.97], &y, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(rce_grad(&[0.2, 0.6, 0.97], &y, &w).unwrap()[2], 0.0);
    }

    #[test]
    fn equals_mean_bce_without_masks_or_weights() {
        let p = [0.2, 0.7, 0.4];
        let y = [0, 1, 1];
        let bce: f64 = -((0.8f64).ln() + (0.7f64).ln() + (0.4f64).ln()) / 3.0;
        assert!((rce_loss(&p, &y, &[1.0; 3]).unwrap() - bce).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sample_is_an_error() {
        assert!(matches!(rce_loss(&[0.5], &[-1], &[1.0]), Err(PhdError::DegenerateSample)));
        assert!(rce_loss(&[0.5], &[1, 0], &[1.0]).is_err());
    }

    #[test]
    fn pos_weight_ratio_rule() {
        let mut labels = vec![lv(&[1]); 50];
        labels.extend(vec![lv(&[0]); 50]);
        assert_eq!(compute_pos_weights(&labels, 1, 100.0).unwrap().weights, vec![1.0]);
        let mut labels = vec![lv(&[1]); 10];
        labels.extend(vec![lv(&[0]); 90]);
        assert_eq!(compute_pos_weights(&labels, 1, 100.0).unwrap().weights, vec![9.0]);
        let pw = compute_pos_weights(&[lv(&[0]), lv(&[0])], 1, 100.0).unwrap();
        assert_eq!(pw.weights, vec![100.0]);
        assert_eq!(pw.capped, vec![0]);
        assert!(compute_pos_weights(&[lv(&[-1])], 1, 100.0).is_err());
    }

    #[test]
    fn node_matches_scalar_mean() {
        let mut g = Graph::new();
        let p = g.input(Mat::from_shape_vec((3, 2), vec![0.3, 0.6, 0.2, 0.9, 0.5, 0.5]).unwrap());
        let labels = vec![lv(&[0, 1]), lv(&[1, 1]), lv(&[-1, -1])];
        let w = [4.0, 2.0];
        let (node, dropped) = rce_node(&mut g, p, &labels, &w).unwrap();
        assert_eq!(dropped, 1);
        let want = (rce_loss(&[0.3, 0.6], &[0, 1], &w).unwrap()
            + rce_loss(&[0.2, 0.9], &[1, 1], &w).unwrap())
            / 2.0;
        assert!((g.scalar(node) - want).abs() < 1e-15);
    }
}
