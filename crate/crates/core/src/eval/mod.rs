//! Discrimination metrics and the evaluation protocol.

mod metrics;
mod plots;
mod protocol;
mod stats;

pub use metrics::{area_up_to, auc, horizon_column, partial_auc, roc_curve, HorizonMetrics, PaucMode};
pub use plots::{emit_curves, plot_history, plot_ladder, plot_roc, CurveArtifacts};
pub use protocol::{
    aggregate, history_ablation, patient_groups, repeated_split_eval, sample_single_exam,
    single_exam_draws, split_seed, AggregateRow, EvalSettings, MeanStd, ModelResult, RepeatedResult,
    RepetitionMetrics, SampledMetrics, SplitResult,
};
pub use stats::{mean_std, midranks, wilcoxon_signed_rank};
