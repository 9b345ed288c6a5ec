use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::aggregator::{Aggregator, AggregatorConfig, SequenceAggregator};
use super::hazard::{logit, RISK_EPS};
use crate::nn::{Graph, Linear, ParamStore, Var};

/// Longitudinal aggregator followed by the additive hazard head.
#[derive(Debug, Clone)]
pub struct RiskModel {
    pub aggregator: Aggregator,
    head: Linear,
    pub horizons: usize,
    pub seq: usize,
}

impl RiskModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        history_len: usize,
        horizons: usize,
        config: &AggregatorConfig,
        rng: &mut R,
    ) -> Self {
        let seq = history_len + 1;
        let aggregator = Aggregator::new(store, dim, seq, config, rng);
        let head = Linear::new(store, "hazard", aggregator.output_dim(), horizons + 1, rng);
        // Start near a small baseline risk with small yearly increments.
        let bias = store.value_mut(head.bias);
        bias[[0, 0]] = logit(0.05);
        for k in 1..=horizons {
            bias[[0, k]] = -4.0;
        }
        Self {
            aggregator,
            head,
            horizons,
            seq,
        }
    }

    /// Returns the pre-activations (B x (K+1)) and clamped cumulative risk (B x K).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        slots: &[Var],
        present: &[Vec<bool>],
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Var, Var) {
        let q = self.aggregator.forward(g, store, slots, present, rng);
        let pre = self.head.forward(g, store, q);
        let risk = g.hazard(pre, RISK_EPS);
        (pre, risk)
    }
}
