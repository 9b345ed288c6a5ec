use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, MASKED};
use crate::error::{PhdError, Result};
use crate::nn::Mat;

/// How the area under the ROC curve up to `fpr_max` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaucMode {
    /// McClish standardization: 0.5 for a random ranker, 1 for a perfect one.
    #[default]
    McClish,
    /// Raw area in `[0, fpr_max]`.
    Raw,
    /// Raw area divided by `fpr_max`.
    Normalized,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(PhdError::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PhdError::Numeric("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(PhdError::UndefinedMetric(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            if labels[o] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` from a sweep over the distinct scores, highest
/// first, starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under `points` for `fpr <= fpr_max`, interpolating the
/// curve at `fpr_max`.
pub fn area_up_to(points: &[(f64, f64)], fpr_max: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= fpr_max {
            break;
        }
        if x1 <= fpr_max {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0);
            area += (fpr_max - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area
}

/// Partial AUC over false-positive rates in `[0, fpr_max]`.
pub fn partial_auc(scores: &[f64], labels: &[bool], fpr_max: f64, mode: PaucMode) -> Result<f64> {
    if !(fpr_max > 0.0 && fpr_max <= 1.0) {
        return Err(PhdError::invalid(format!("fpr_max must be in (0, 1], got {fpr_max}")));
    }
    if fpr_max == 1.0 && mode != PaucMode::Raw {
        return auc(scores, labels);
    }
    let a = area_up_to(&roc_curve(scores, labels)?, fpr_max);
    let f = fpr_max;
    Ok(match mode {
        PaucMode::Raw => a,
        PaucMode::Normalized => a / f,
        PaucMode::McClish => {
            let min = f * f / 2.0;
            0.5 * (1.0 + (a - min) / (f - min))
        }
    })
}

/// Scores and binary labels at horizon `k` (0-based), skipping masked rows.
pub fn horizon_column(probs: &Mat, labels: &[LabelVector], k: usize) -> (Vec<f64>, Vec<bool>) {
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (r, l) in labels.iter().enumerate() {
        let v = l.get(k);
        if v != MASKED {
            s.push(probs[[r, k]]);
            y.push(v == 1);
        }
    }
    (s, y)
}

/// Per-horizon AUC and partial AUC of one prediction matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    /// `None` where a horizon has only one class among known labels.
    pub auc: Vec<Option<f64>>,
    pub pauc: Vec<Option<f64>>,
    pub positives: Vec<usize>,
    pub known: Vec<usize>,
}

impl HorizonMetrics {
    pub fn compute(probs: &Mat, labels: &[LabelVector], fpr_max: f64, mode: PaucMode) -> Result<Self> {
        if probs.nrows() != labels.len() {
            return Err(PhdError::invalid("prediction and label counts differ"));
        }
        let k = probs.ncols();
        let mut out = Self {
            auc: Vec::with_capacity(k),
            pauc: Vec::with_capacity(k),
            positives: Vec::with_capacity(k),
            known: Vec::with_capacity(k),
        };
        for h in 0..k {
            let (s, y) = horizon_column(probs, labels, h);
            out.positives.push(y.iter().filter(|&&v| v).count());
            out.known.push(y.len());
            out.auc.push(defined(auc(&s, &y))?);
            out.pauc.push(defined(partial_auc(&s, &y, fpr_max, mode))?);
        }
        Ok(out)
    }

    /// Mean AUC over the horizons where it is defined.
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.auc.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(PhdError::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let y = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &y).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(PhdError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn pauc_perfect_and_random_diagonal() {
        let y = [false, false, true, true];
        let s = [0.1, 0.2, 0.8, 0.9];
        for mode in [PaucMode::McClish, PaucMode::Normalized] {
            assert!((partial_auc(&s, &y, 0.1, mode).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((partial_auc(&s, &y, 0.1, PaucMode::Raw).unwrap() - 0.1).abs() < 1e-12);
        // A diagonal ROC has raw area f^2/2, which standardizes to 0.5.
        let diag = [(0.0, 0.0), (1.0, 1.0)];
        let a = area_up_to(&diag, 0.1);
        assert!((a - 0.005).abs() < 1e-12);
    }

    #[test]
    fn full_range_equals_auc() {
        let s = [0.3, 0.1, 0.7, 0.4, 0.4, 0.9];
        let y = [false, true, true, false, true, false];
        assert_eq!(
            partial_auc(&s, &y, 1.0, PaucMode::McClish).unwrap(),
            auc(&s, &y).unwrap()
        );
        let raw = partial_auc(&s, &y, 1.0, PaucMode::Raw).unwrap();
        assert!((raw - auc(&s, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn roc_ties_make_one_step() {
        let pts = roc_curve(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
    }
}
