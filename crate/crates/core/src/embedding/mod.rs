//! Exam encoding, view pooling and history-sequence assembly.

pub mod encoder;
pub mod history;
pub mod views;

pub use encoder::{FrozenProjectionEncoder, IdentityEncoder, ViewEncoder};
pub use history::{
    build_history_sequence, HistorySequence, SampleRef, SampleTable, SequenceBatch, SlotSource,
    VisitEmbedding,
};
pub use views::{embed_cohort_views, embed_exam, AttentionPooling, MeanPooling, ViewAggregator};
