//! Teachers, students and the distillation objective.

mod kd;
mod model;
mod train;

pub use kd::{check_coefficients, logit_kd_grad, logit_kd_loss, logit_kd_node, total_loss, total_node};
pub use model::{BundleKind, Frozen, HistoryModel, ModelSpec, Parameterized, StudentModel, TeacherBundle};
pub use train::{
    derive_seed, fit, train_history_model, train_student, train_teachers, tune_lambda, FitReport,
    LambdaSearch, Step, TrainConfig, TrainLog,
};
