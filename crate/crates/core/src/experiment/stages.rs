//! Separately invocable pipeline stages backed by on-disk checkpoints, so
//! the expensive teacher stage can be reused across student runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::pipeline::{
    evaluate_models, load_checkpoint, load_cohort_source, stage_baseline, stage_single_teacher, stage_student,
    stage_teachers, teacher_name, write_metric_rows, write_predictions, OutputDir, SplitData, SplitModels, BASELINE, MULTITASK, PHD,
    SINGLE_TEACHER, TEACHER,
};
use crate::data::Cohort;
use crate::distill::{HistoryModel, StudentModel, TeacherBundle};
use crate::error::{PhdError, Result};
use crate::eval::{AggregateRow, ModelResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Teachers,
    Student,
    Baseline,
    SingleTeacher,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "teachers" => Ok(Stage::Teachers),
            "student" => Ok(Stage::Student),
            "baseline" => Ok(Stage::Baseline),
            "single-teacher" => Ok(Stage::SingleTeacher),
            other => Err(PhdError::Config {
                field: "stage".into(),
                message: format!("unknown stage {other:?}; expected teachers, student, baseline or single-teacher"),
            }),
        }
    }
}

/// What a stage wrote.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutput {
    pub stage: Stage,
    pub checkpoints: Vec<PathBuf>,
    pub best_metrics: Vec<(String, f64)>,
    pub lambda_logit: Option<f64>,
}

fn prepare(cfg: &ExperimentConfig, split: usize) -> Result<(Cohort, SplitData)> {
    cfg.validate()?;
    let cohort = load_cohort_source(&cfg.cohort)?;
    cohort.validate()?;
    let data = SplitData::prepare(&cohort, cfg, split)?;
    Ok((cohort, data))
}

fn ckpt_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

pub fn load_history_model(dir: &Path, name: &str, hash: &str, allow_mismatch: bool) -> Result<HistoryModel> {
    HistoryModel::from_checkpoint(&load_checkpoint(&ckpt_path(dir, name), hash, allow_mismatch)?)
}

pub fn load_student(dir: &Path, name: &str, hash: &str, allow_mismatch: bool) -> Result<(StudentModel, Value)> {
    let ckpt = load_checkpoint(&ckpt_path(dir, name), hash, allow_mismatch)?;
    let info = ckpt.meta["info"].clone();
    Ok((StudentModel::from_checkpoint(&ckpt)?, info))
}

/// The uni-task teacher bundle, one checkpoint per horizon.
pub fn load_teachers(dir: &Path, horizons: usize, hash: &str, allow_mismatch: bool) -> Result<TeacherBundle> {
    let experts = (1..=horizons)
        .map(|k| load_history_model(dir, &teacher_name(k), hash, allow_mismatch))
        .collect::<Result<Vec<_>>>()?;
    TeacherBundle::uni_task(experts)
}

/// Runs one training stage on split `split` and writes its checkpoints
/// and logs under `out`.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, out: &OutputDir, split: usize) -> Result<StageOutput> {
    let (_, data) = prepare(cfg, split)?;
    let hash = cfg.hash();
    let dir = out.checkpoint_dir(split);
    let k = data.spec.horizons;
    let mut checkpoints = Vec::new();
    let mut best_metrics = Vec::new();
    let mut lambda_logit = None;
    let info = |extra: Value| {
        let mut v = json!({ "split": split });
        if let (Some(m), Value::Object(e)) = (v.as_object_mut(), extra) {
            m.extend(e);
        }
        v
    };
    match stage {
        Stage::Teachers => {
            let t = stage_teachers(&data, cfg)?;
            for (i, m) in t.bundle.members().iter().enumerate() {
                let name = teacher_name(i + 1);
                let r = &t.reports[i];
                let p = out.checkpoint(split, &name)?;
                m.get().save(&p, &name, &hash, info(json!({ "best_metric": r.best_metric })))?;
                checkpoints.push(p);
            }
            let r = t.reports.last().expect("multitask report");
            let p = out.checkpoint(split, MULTITASK)?;
            t.multitask.save(&p, MULTITASK, &hash, info(json!({ "best_metric": r.best_metric })))?;
            checkpoints.push(p);
            for r in &t.reports {
                out.log(split, r)?;
                best_metrics.push((r.stage.clone(), r.best_metric));
            }
        }
        Stage::Baseline => {
            let (m, r) = stage_baseline(&data, cfg)?;
            let p = out.checkpoint(split, BASELINE)?;
            m.save(&p, BASELINE, &hash, info(json!({ "best_metric": r.best_metric })))?;
            out.log(split, &r)?;
            checkpoints.push(p);
            best_metrics.push((r.stage, r.best_metric));
        }
        Stage::Student => {
            let bundle = load_teachers(&dir, k, &hash, false).map_err(teachers_missing)?;
            let s = stage_student(&data, cfg, &bundle)?;
            let p = out.checkpoint(split, PHD)?;
            s.model.save(
                &p,
                PHD,
                &hash,
                info(json!({
                    "best_metric": s.report.best_metric,
                    "lambda_logit": s.best_lambda,
                    "lambda_scores": s.scores,
                    "teacher_checksums": bundle.checksums(),
                })),
            )?;
            out.log(split, &s.report)?;
            checkpoints.push(p);
            best_metrics.push((s.report.stage, s.report.best_metric));
            lambda_logit = Some(s.best_lambda);
        }
        Stage::SingleTeacher => {
            let teacher = load_history_model(&dir, MULTITASK, &hash, false).map_err(teachers_missing)?;
            let reused = if cfg.eval.reuse_lambda_for_single {
                load_student(&dir, PHD, &hash, false)
                    .ok()
                    .and_then(|(_, info)| info["lambda_logit"].as_f64())
            } else {
                None
            };
            let (m, r, l) = stage_single_teacher(&data, cfg, teacher, reused)?;
            let p = out.checkpoint(split, SINGLE_TEACHER)?;
            m.save(&p, SINGLE_TEACHER, &hash, info(json!({ "best_metric": r.best_metric, "lambda_logit": l })))?;
            out.log(split, &r)?;
            checkpoints.push(p);
            best_metrics.push((r.stage, r.best_metric));
            lambda_logit = Some(l);
        }
    }
    Ok(StageOutput {
        stage,
        checkpoints,
        best_metrics,
        lambda_logit,
    })
}

fn teachers_missing(e: PhdError) -> PhdError {
    match e {
        PhdError::Dependency(msg) => {
            PhdError::Dependency(format!("{msg}; run `train --stage teachers` first"))
        }
        other => other,
    }
}

/// Result of evaluating the checkpoints of one split.
#[derive(Debug, Clone, Serialize)]
pub struct CheckpointEval {
    pub config_hash: String,
    pub split: usize,
    pub models: Vec<ModelResult>,
}

impl CheckpointEval {
    /// Table layout: full-history teacher, no-KD student and PHD student.
    pub fn table(&self, history_len: usize) -> Vec<&ModelResult> {
        [(TEACHER, history_len), (BASELINE, 0), (PHD, 0)]
            .iter()
            .filter_map(|(m, h)| self.models.iter().find(|r| r.model == *m && r.n_available == *h))
            .collect()
    }
}

/// Evaluates every checkpoint found in `dir` on the test patients of
/// split `split`. Teachers are swept over `#H`, students scored at `#H = 0`.
pub fn eval_checkpoints(
    cfg: &ExperimentConfig,
    dir: &Path,
    split: usize,
    allow_mismatch: bool,
    out: &OutputDir,
) -> Result<CheckpointEval> {
    let (cohort, data) = prepare(cfg, split)?;
    let hash = cfg.hash();
    let k = data.spec.horizons;
    if !dir.is_dir() {
        return Err(PhdError::Dependency(format!("checkpoint directory {} not found", dir.display())));
    }
    let has = |name: &str| ckpt_path(dir, name).exists();
    let bundle = if (1..=k).any(|i| has(&teacher_name(i))) {
        Some(load_teachers(dir, k, &hash, allow_mismatch)?)
    } else {
        None
    };
    let history = |name: &str| -> Result<Option<HistoryModel>> {
        has(name).then(|| load_history_model(dir, name, &hash, allow_mismatch)).transpose()
    };
    let student = |name: &str| -> Result<Option<StudentModel>> {
        has(name)
            .then(|| load_student(dir, name, &hash, allow_mismatch).map(|(m, _)| m))
            .transpose()
    };
    let models = SplitModels {
        bundle,
        multitask: history(MULTITASK)?,
        baseline: student(BASELINE)?,
        phd: student(PHD)?,
        single: student(SINGLE_TEACHER)?,
    };
    if models.bundle.is_none()
        && models.multitask.is_none()
        && models.baseline.is_none()
        && models.phd.is_none()
        && models.single.is_none()
    {
        return Err(PhdError::Dependency(format!("no checkpoints found in {}", dir.display())));
    }
    let (results, preds) = evaluate_models(&data, cfg, &models, false)?;
    for (name, h, probs) in &preds {
        let p = out.file(Path::new("eval").join(format!("predictions_{name}_h{h}.csv")))?;
        write_predictions(&p, &cohort, &data.tests[*h], probs)?;
    }
    let eval = CheckpointEval {
        config_hash: hash,
        split,
        models: results,
    };
    write_metric_rows(&out.file("eval/metrics.csv")?, eval.models.iter().map(|m| (split, m)))?;
    let rows: Vec<AggregateRow> = eval.models.iter().map(AggregateRow::from).collect();
    let table: Vec<AggregateRow> = eval.table(data.spec.history_len).into_iter().map(AggregateRow::from).collect();
    let summary = json!({
        "config_hash": eval.config_hash,
        "split": split,
        "table": table,
        "rows": rows,
    });
    let p = out.file("eval/summary.json")?;
    fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| PhdError::io(&p, e))?;
    Ok(eval)
}
