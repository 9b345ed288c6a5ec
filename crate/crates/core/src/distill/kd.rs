use crate::data::{LabelVector, MASKED};
use crate::error::{PhdError, Result};
use crate::nn::graph::{bernoulli_kl, sigmoid};
use crate::nn::{Graph, Mat, Var};

fn check(tea: &[f64], stu: &[f64], mask: &[bool]) -> Result<usize> {
    if tea.len() != stu.len() || tea.len() != mask.len() {
        return Err(PhdError::invalid("logit KD inputs differ in length"));
    }
    let m = mask.iter().filter(|m| **m).count();
    if m == 0 {
        return Err(PhdError::DegenerateSample);
    }
    Ok(m)
}

/// Mean over unmasked horizons of `KL(sigmoid(z_tea) || sigmoid(z_stu))`
/// between Bernoulli distributions, teacher first.
pub fn logit_kd_loss(tea: &[f64], stu: &[f64], mask: &[bool]) -> Result<f64> {
    let m = check(tea, stu, mask)?;
    let total: f64 = tea
        .iter()
        .zip(stu)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&t, &s), _)| bernoulli_kl(sigmoid(t), sigmoid(s)))
        .sum();
    Ok(total / m as f64)
}

/// Gradient of [`logit_kd_loss`] with respect to the student logits:
/// `(sigmoid(z_stu) - sigmoid(z_tea)) / sum(m)` on unmasked horizons.
pub fn logit_kd_grad(tea: &[f64], stu: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let m = check(tea, stu, mask)? as f64;
    Ok(tea
        .iter()
        .zip(stu)
        .zip(mask)
        .map(|((&t, &s), &on)| if on { (sigmoid(s) - sigmoid(t)) / m } else { 0.0 })
        .collect())
}

/// Batch logit-KD node on student probabilities (`sigmoid(z) = P`). Teacher
/// probabilities are constants; the mask comes from label validity. The
/// value is the mean per-sample loss over rows with any valid horizon.
pub fn logit_kd_node(
    g: &mut Graph,
    student_prob: Var,
    teacher_prob: &Mat,
    labels: &[LabelVector],
    temperature: f64,
) -> Option<Var> {
    let (n, k) = teacher_prob.dim();
    let counts: Vec<usize> = labels
        .iter()
        .map(|l| l.as_slice().iter().filter(|&&y| y != MASKED).count())
        .collect();
    let n_eff = counts.iter().filter(|&&c| c > 0).count();
    if n_eff == 0 {
        return None;
    }
    let mut coef = Mat::zeros((n, k));
    for (r, l) in labels.iter().enumerate() {
        for (j, &y) in l.as_slice().iter().enumerate() {
            if y != MASKED {
                coef[[r, j]] = 1.0 / (counts[r] as f64 * n_eff as f64);
            }
        }
    }
    let (q, target) = if temperature == 1.0 {
        (student_prob, teacher_prob.clone())
    } else {
        let t = teacher_prob.mapv(|p| sigmoid((p / (1.0 - p)).ln() / temperature));
        (g.temper(student_prob, temperature), t)
    };
    Some(g.bernoulli_kl(q, target, coef))
}

/// `rce + lambda_logit * kd_logit + lambda_feature * kd_feature`.
pub fn total_loss(rce: f64, kd_logit: f64, kd_feature: f64, lambda_logit: f64, lambda_feature: f64) -> Result<f64> {
    check_coefficients(lambda_logit, lambda_feature)?;
    if ![rce, kd_logit, kd_feature].iter().all(|v| v.is_finite()) {
        return Err(PhdError::Numeric("non-finite loss component".into()));
    }
    let mut total = rce;
    if lambda_logit != 0.0 {
        total += lambda_logit * kd_logit;
    }
    if lambda_feature != 0.0 {
        total += lambda_feature * kd_feature;
    }
    Ok(total)
}

pub fn check_coefficients(lambda_logit: f64, lambda_feature: f64) -> Result<()> {
    if !(lambda_logit >= 0.0) || !(lambda_feature >= 0.0) {
        return Err(PhdError::invalid(format!(
            "loss coefficients must be non-negative (lambda_logit={lambda_logit}, lambda_feature={lambda_feature})"
        )));
    }
    Ok(())
}

/// Graph counterpart of [`total_loss`]; absent components contribute nothing.
pub fn total_node(
    g: &mut Graph,
    rce: Var,
    kd_logit: Option<Var>,
    kd_feature: Option<Var>,
    lambda_logit: f64,
    lambda_feature: f64,
) -> Var {
    let mut terms = vec![(rce, 1.0)];
    if let Some(v) = kd_logit.filter(|_| lambda_logit != 0.0) {
        terms.push((v, lambda_logit));
    }
    if let Some(v) = kd_feature.filter(|_| lambda_feature != 0.0) {
        terms.push((v, lambda_feature));
    }
    if terms.len() == 1 {
        rce
    } else {
        g.combine(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_logits_give_zero() {
        let z = [0.3, -2.0, 4.0];
        assert_eq!(logit_kd_loss(&z, &z, &[true; 3]).unwrap(), 0.0);
    }

    #[test]
    fn hand_value() {
        let v = logit_kd_loss(&[0.0], &[3f64.ln()], &[true]).unwrap();
        let want = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn masked_horizons_are_inert() {
        let t = [0.1, 0.5];
        let a = logit_kd_loss(&t, &[1.0, -3.0], &[true, false]).unwrap();
        let b = logit_kd_loss(&t, &[1.0, 9.0], &[true, false]).unwrap();
        assert_eq!(a, b);
        assert_eq!(logit_kd_grad(&t, &[1.0, 9.0], &[true, false]).unwrap()[1], 0.0);
        assert!(matches!(
            logit_kd_loss(&t, &t, &[false, false]),
            Err(PhdError::DegenerateSample)
        ));
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.0, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(total_loss(0.7, 0.5, 3.0, 0.0, 0.0).unwrap(), 0.7);
        assert!(total_loss(1.0, 0.5, 0.0, -1.0, 0.0).is_err());
        assert!(total_loss(1.0, f64::NAN, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn temperature_one_matches_plain_kl() {
        let labels = vec![LabelVector::new(vec![0, 1]).unwrap()];
        let tea = Mat::from_shape_vec((1, 2), vec![0.2, 0.7]).unwrap();
        let stu = Mat::from_shape_vec((1, 2), vec![0.4, 0.5]).unwrap();
        let mut g = Graph::new();
        let s = g.input(stu.clone());
        let a = logit_kd_node(&mut g, s, &tea, &labels, 1.0).unwrap();
        let z = |p: f64| (p / (1.0 - p)).ln();
        let want = logit_kd_loss(&[z(0.2), z(0.7)], &[z(0.4), z(0.5)], &[true, true]).unwrap();
        assert!((g.scalar(a) - want).abs() < 1e-12);
        let b = logit_kd_node(&mut g, s, &tea, &labels, 2.0).unwrap();
        let want2 = logit_kd_loss(&[z(0.2) / 2.0, z(0.7) / 2.0], &[z(0.4) / 2.0, z(0.5) / 2.0], &[true, true]).unwrap();
        assert!((g.scalar(b) - want2).abs() < 1e-12);
    }
}
