use serde::{Deserialize, Serialize};

use crate::error::{PhdError, Result};
use crate::nn::graph::{clamp_unit, sigmoid, softplus};

/// Clamp applied to cumulative risk so that logits stay finite.
pub const RISK_EPS: f64 = 1e-6;

/// Output of the additive hazard head for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskOutput {
    pub baseline: f64,
    pub increments: Vec<f64>,
    pub cum_risk: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Additive hazard head on pre-activations: `pre[0]` drives the baseline
/// `B = sigmoid(.)`, `pre[1..=K]` the increments `H_i = softplus(.)`, and
/// `P_k = clamp(B + H_0 + ... + H_{k-1}, eps, 1 - eps)`.
pub fn hazard_head(pre: &[f64], eps: f64) -> Result<RiskOutput> {
    if pre.len() < 2 {
        return Err(PhdError::invalid("hazard head needs a baseline and at least one increment"));
    }
    if let Some(i) = pre.iter().position(|v| !v.is_finite()) {
        return Err(PhdError::Numeric(format!(
            "non-finite hazard pre-activation at index {i}"
        )));
    }
    let baseline = sigmoid(pre[0]);
    let increments: Vec<f64> = pre[1..].iter().map(|&a| softplus(a)).collect();
    let mut acc = baseline;
    let mut cum_risk = Vec::with_capacity(increments.len());
    for h in &increments {
        acc += h;
        cum_risk.push(clamp_unit(acc, eps).0);
    }
    let logits = cum_risk.iter().map(|&p| logit(p)).collect();
    Ok(RiskOutput {
        baseline,
        increments,
        cum_risk,
        logits,
    })
}

/// Cumulative risk from an explicit baseline and increments (no activations).
pub fn cumulative_risk(baseline: f64, increments: &[f64], eps: f64) -> Vec<f64> {
    let mut acc = baseline;
    increments
        .iter()
        .map(|h| {
            acc += h;
            clamp_unit(acc, eps).0
        })
        .collect()
}
