//! Longitudinal aggregation, the additive hazard head and the RCE objective.

pub mod aggregator;
pub mod hazard;
pub mod loss;
pub mod model;

pub use aggregator::{
    Aggregator, AggregatorConfig, AggregatorKind, AttentionAggregator, Readout, RecurrentAggregator,
    SequenceAggregator,
};
pub use hazard::{cumulative_risk, hazard_head, logit, RiskOutput, RISK_EPS};
pub use loss::{compute_pos_weights, rce_grad, rce_loss, rce_node, PosWeights};
pub use model::RiskModel;
