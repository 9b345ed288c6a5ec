//! Experiment configuration and the end-to-end train/evaluate pipeline.

mod config;
mod pipeline;
mod stages;

pub use config::{CohortSource, EvalConfig, ExperimentConfig, ModelConfig};
pub use pipeline::{
    evaluate_models, load_checkpoint, load_cohort_source, run_experiment, run_split, stage_baseline,
    stage_single_teacher, stage_student, stage_teachers, teacher_name, write_predictions, ExperimentReport,
    LambdaRecord, OutputDir, SplitData, SplitModels, SplitOutcome, TeacherStage, BASELINE, MULTITASK, PHD,
    SINGLE_TEACHER, TEACHER,
};
pub use stages::{
    eval_checkpoints, load_history_model, load_student, load_teachers, run_stage, CheckpointEval, Stage, StageOutput,
};
