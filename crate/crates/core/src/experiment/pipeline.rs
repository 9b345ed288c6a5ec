use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{CohortSource, ExperimentConfig};
use crate::data::{generate_synthetic_cohort, load_cohort, patient_level_split, Cohort, CohortSplit};
use crate::distill::{
    train_history_model, train_student, train_teachers, tune_lambda, FitReport, HistoryModel, LambdaSearch,
    ModelSpec, StudentModel, TeacherBundle, TrainConfig,
};
use crate::embedding::SampleTable;
use crate::error::{PhdError, Result};
use crate::eval::{
    emit_curves, horizon_column, repeated_split_eval, roc_curve, split_seed, wilcoxon_signed_rank,
    CurveArtifacts, ModelResult, RepeatedResult,
};
use crate::nn::{Checkpoint, Mat};

pub const TEACHER: &str = "teacher";
pub const MULTITASK: &str = "multitask";
pub const BASELINE: &str = "baseline";
pub const SINGLE_TEACHER: &str = "single_teacher";
pub const PHD: &str = "phd";

pub fn load_cohort_source(source: &CohortSource) -> Result<Cohort> {
    match source {
        CohortSource::Synthetic(s) => generate_synthetic_cohort(s),
        CohortSource::File(path) => {
            if !path.exists() {
                return Err(PhdError::Dependency(format!("cohort file {} not found", path.display())));
            }
            load_cohort(path)
        }
    }
}

/// Tables of one patient-level split: training and validation with full
/// history, test at every history availability `#H = 0..=T_h`.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub index: usize,
    pub seed: u64,
    pub split: CohortSplit,
    pub train: SampleTable,
    pub val: SampleTable,
    pub tests: Vec<SampleTable>,
    pub spec: ModelSpec,
}

impl SplitData {
    pub fn prepare(cohort: &Cohort, cfg: &ExperimentConfig, index: usize) -> Result<Self> {
        let seed = split_seed(cfg.seed, index);
        let split = patient_level_split(cohort, cfg.eval.train_frac, cfg.eval.val_frac_of_train, seed)?;
        let th = cohort.history_len;
        let train = SampleTable::build(cohort, &split.train_ids, th)?;
        let val = SampleTable::build(cohort, &split.val_ids, th)?;
        let tests = (0..=th)
            .map(|h| SampleTable::build(cohort, &split.test_ids, h))
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            dim: cohort.dim,
            history_len: th,
            horizons: cohort.horizons,
            aggregator: cfg.model.aggregator.clone(),
            predictor: cfg.model.predictor.clone(),
        };
        Ok(Self {
            index,
            seed,
            split,
            train,
            val,
            tests,
            spec,
        })
    }

    pub fn full_test(&self) -> &SampleTable {
        self.tests.last().expect("at least #H = 0")
    }

    pub fn train_config(&self, cfg: &ExperimentConfig) -> TrainConfig {
        TrainConfig {
            seed: cfg.train.seed.wrapping_add(self.seed),
            ..cfg.train.clone()
        }
    }

    fn eval_seed(&self) -> u64 {
        self.seed ^ 0x5EED_0F_E7A1
    }
}

/// Output directory layout shared by the CLI stages and full runs.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| PhdError::io(dir, e))?;
        }
        Ok(p)
    }

    pub fn checkpoint_dir(&self, split: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("split{split}"))
    }

    pub fn checkpoint(&self, split: usize, name: &str) -> Result<PathBuf> {
        self.file(Path::new("checkpoints").join(format!("split{split}")).join(format!("{name}.json")))
    }

    pub fn log(&self, split: usize, report: &FitReport) -> Result<()> {
        let p = self.file(Path::new("logs").join(format!("split{split}")).join(format!("{}.jsonl", report.stage)))?;
        report.log.write_jsonl(&p)
    }
}

pub fn teacher_name(k: usize) -> String {
    format!("teacher{k}")
}

/// The teacher stage: one uni-task expert per horizon plus the multi-task
/// full-history model that serves as the single teacher.
pub struct TeacherStage {
    pub bundle: TeacherBundle,
    pub multitask: HistoryModel,
    pub reports: Vec<FitReport>,
}

pub fn stage_teachers(data: &SplitData, cfg: &ExperimentConfig) -> Result<TeacherStage> {
    let tc = data.train_config(cfg);
    let (multitask, r) = train_history_model(MULTITASK, &data.spec, &data.train, &data.val, &tc, None, None)?;
    let init = tc.expert_warm_start.then_some(&multitask);
    let (bundle, mut reports) = train_teachers(&data.spec, &data.train, &data.val, &tc, init)?;
    reports.push(r);
    Ok(TeacherStage {
        bundle,
        multitask,
        reports,
    })
}

/// Student without any distillation (both KD weights zero).
pub fn stage_baseline(data: &SplitData, cfg: &ExperimentConfig) -> Result<(StudentModel, FitReport)> {
    let tc = TrainConfig {
        lambda_logit: 0.0,
        lambda_feature: 0.0,
        ..data.train_config(cfg)
    };
    train_student(BASELINE, &data.spec, &data.train, &data.val, &tc, None)
}

/// Student distilled from the uni-task bundle, with the logit-KD weight
/// chosen on validation.
pub fn stage_student(data: &SplitData, cfg: &ExperimentConfig, bundle: &TeacherBundle) -> Result<LambdaSearch> {
    tune_lambda(
        PHD,
        &data.spec,
        &data.train,
        &data.val,
        &data.train_config(cfg),
        bundle,
        &cfg.eval.lambda_grid,
    )
}

/// Student distilled from the single multi-task teacher. With a given
/// `lambda` no search is run.
pub fn stage_single_teacher(
    data: &SplitData,
    cfg: &ExperimentConfig,
    multitask: HistoryModel,
    lambda: Option<f64>,
) -> Result<(StudentModel, FitReport, f64)> {
    let bundle = TeacherBundle::single(multitask);
    match lambda {
        Some(l) => {
            let tc = TrainConfig {
                lambda_logit: l,
                ..data.train_config(cfg)
            };
            let (m, r) = train_student(SINGLE_TEACHER, &data.spec, &data.train, &data.val, &tc, Some(&bundle))?;
            Ok((m, r, l))
        }
        None => {
            let s = tune_lambda(
                SINGLE_TEACHER,
                &data.spec,
                &data.train,
                &data.val,
                &data.train_config(cfg),
                &bundle,
                &cfg.eval.lambda_grid,
            )?;
            Ok((s.model, s.report, s.best_lambda))
        }
    }
}

/// Trained models of one split.
pub struct SplitModels {
    pub bundle: Option<TeacherBundle>,
    pub multitask: Option<HistoryModel>,
    pub baseline: Option<StudentModel>,
    pub phd: Option<StudentModel>,
    pub single: Option<StudentModel>,
}

/// Evaluates whichever models are present. History models are swept over
/// every `#H`; students are scored at `#H = 0` (and swept when `sweep_students`).
pub fn evaluate_models(
    data: &SplitData,
    cfg: &ExperimentConfig,
    models: &SplitModels,
    sweep_students: bool,
) -> Result<(Vec<ModelResult>, Vec<(String, usize, Mat)>)> {
    let settings = cfg.eval.settings();
    let seed = data.eval_seed();
    let mut results = Vec::new();
    let mut preds = Vec::new();
    let th = data.spec.history_len;
    let mut record = |name: &str, h: usize, probs: Mat| -> Result<()> {
        let metrics = settings.evaluate(&probs, &data.tests[h], seed)?;
        results.push(ModelResult {
            model: name.to_string(),
            n_available: h,
            metrics,
        });
        preds.push((name.to_string(), h, probs));
        Ok(())
    };
    for h in 0..=th {
        let batch = &data.tests[h].batch;
        if let Some(b) = &models.bundle {
            record(TEACHER, h, b.probs(batch)?)?;
        }
        if let Some(m) = &models.multitask {
            record(MULTITASK, h, m.predict(batch)?)?;
        }
        if h == 0 || sweep_students {
            for (name, m) in [(BASELINE, &models.baseline), (SINGLE_TEACHER, &models.single), (PHD, &models.phd)] {
                if let Some(m) = m {
                    record(name, h, m.predict_batch(batch)?)?;
                }
            }
        }
    }
    Ok((results, preds))
}

/// Writes `patient_id, exam_year, P_1..P_K, y_1..y_K` for one model.
pub fn write_predictions(path: &Path, cohort: &Cohort, table: &SampleTable, probs: &Mat) -> Result<()> {
    let k = probs.ncols();
    let mut w = csv::Writer::from_path(path).map_err(|e| PhdError::Training(format!("{}: {e}", path.display())))?;
    let mut header = vec!["patient_id".to_string(), "exam_year".to_string()];
    header.extend((1..=k).map(|i| format!("P_{i}")));
    header.extend((1..=k).map(|i| format!("y_{i}")));
    let csv_err = |e: csv::Error| PhdError::Training(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for (row, r) in table.refs.iter().enumerate() {
        let p = &cohort.patients[r.patient];
        let mut rec = vec![p.patient_id.clone(), p.exams[r.exam].relative_year.to_string()];
        rec.extend((0..k).map(|j| format!("{:.6}", probs[[row, j]])));
        rec.extend(table.labels[row].as_slice().iter().map(|y| y.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PhdError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRecord {
    pub split: usize,
    pub phd_lambda: f64,
    pub phd_scores: Vec<(f64, f64)>,
    pub single_lambda: f64,
}

/// Everything produced by one split of the full pipeline.
pub struct SplitOutcome {
    pub results: Vec<ModelResult>,
    pub lambda: LambdaRecord,
    pub roc: Vec<(String, Vec<(f64, f64)>)>,
}

fn save_history_model(out: &OutputDir, split: usize, name: &str, m: &HistoryModel, hash: &str) -> Result<()> {
    m.save(&out.checkpoint(split, name)?, name, hash, json!({ "split": split }))
}

fn save_student(out: &OutputDir, split: usize, name: &str, m: &StudentModel, hash: &str, meta: Value) -> Result<()> {
    m.save(&out.checkpoint(split, name)?, name, hash, meta)
}

/// Trains every model of one split, evaluates them and (with `out`) writes
/// checkpoints, logs and predictions.
pub fn run_split(cohort: &Cohort, cfg: &ExperimentConfig, index: usize, out: Option<&OutputDir>) -> Result<SplitOutcome> {
    let data = SplitData::prepare(cohort, cfg, index)?;
    let hash = cfg.hash();
    info!(
        "split {index}: {} train / {} val / {} test patients",
        data.split.train_ids.len(),
        data.split.val_ids.len(),
        data.split.test_ids.len()
    );
    let teachers = stage_teachers(&data, cfg)?;
    let (baseline, base_report) = stage_baseline(&data, cfg)?;
    let search = stage_student(&data, cfg, &teachers.bundle)?;
    let single_lambda = cfg.eval.reuse_lambda_for_single.then_some(search.best_lambda);
    let (single, single_report, single_lambda) =
        stage_single_teacher(&data, cfg, teachers.multitask.clone(), single_lambda)?;

    if let Some(out) = out {
        for (k, m) in teachers.bundle.members().iter().enumerate() {
            save_history_model(out, index, &teacher_name(k + 1), m.get(), &hash)?;
        }
        save_history_model(out, index, MULTITASK, &teachers.multitask, &hash)?;
        save_student(out, index, BASELINE, &baseline, &hash, json!({ "split": index }))?;
        save_student(
            out,
            index,
            PHD,
            &search.model,
            &hash,
            json!({ "split": index, "lambda_logit": search.best_lambda, "teacher_checksums": teachers.bundle.checksums() }),
        )?;
        save_student(out, index, SINGLE_TEACHER, &single, &hash, json!({ "split": index, "lambda_logit": single_lambda }))?;
        for r in teachers.reports.iter().chain([&base_report, &search.report, &single_report]) {
            out.log(index, r)?;
        }
    }

    let models = SplitModels {
        bundle: Some(teachers.bundle),
        multitask: Some(teachers.multitask),
        baseline: Some(baseline),
        phd: Some(search.model),
        single: Some(single),
    };
    let (results, preds) = evaluate_models(&data, cfg, &models, true)?;
    let k = data.spec.horizons;
    let th = data.spec.history_len;
    let mut roc = Vec::new();
    for (name, h, probs) in &preds {
        let headline = (name == TEACHER && *h == th) || (name != TEACHER && name != MULTITASK && *h == 0);
        if !headline {
            continue;
        }
        let table = &data.tests[*h];
        if let Some(out) = out {
            let p = out.file(Path::new("predictions").join(format!("split{index}")).join(format!("{name}_h{h}.csv")))?;
            write_predictions(&p, cohort, table, probs)?;
        }
        let (s, y) = horizon_column(probs, &table.labels, k - 1);
        if let Ok(c) = roc_curve(&s, &y) {
            roc.push((format!("{name} (#H={h})"), c));
        }
    }
    Ok(SplitOutcome {
        results,
        lambda: LambdaRecord {
            split: index,
            phd_lambda: search.best_lambda,
            phd_scores: search.scores,
            single_lambda,
        },
        roc,
    })
}

#[derive(Debug, Clone, Serialize)]
struct MetricRow<'a> {
    model: &'a str,
    split: usize,
    n_available: usize,
    repetition: usize,
    horizon: usize,
    auc: Option<f64>,
    pauc: Option<f64>,
}

/// One CSV row per (model, split, `#H`, repetition, horizon).
pub(crate) fn write_metric_rows<'a>(
    path: &Path,
    results: impl IntoIterator<Item = (usize, &'a ModelResult)>,
) -> Result<()> {
    let csv_err = |e: csv::Error| PhdError::Training(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (split, m) in results {
        for (repetition, r) in m.metrics.raw.iter().enumerate() {
            for h in 0..r.auc.len() {
                w.serialize(MetricRow {
                    model: &m.model,
                    split,
                    n_available: m.n_available,
                    repetition,
                    horizon: h + 1,
                    auc: r.auc[h],
                    pauc: r.pauc[h],
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| PhdError::io(path, e))
}

/// Outcome of the full repeated-split experiment.
pub struct ExperimentReport {
    pub repeated: RepeatedResult,
    pub lambdas: Vec<LambdaRecord>,
    pub summary: Value,
}

impl ExperimentReport {
    /// Mean over splits of one model's pAUC at `horizon`.
    pub fn pauc(&self, model: &str, n_available: usize, horizon: usize) -> Option<f64> {
        self.repeated
            .row(model, n_available)
            .and_then(|r| r.pauc.get(horizon - 1).copied().flatten())
            .map(|m| m.mean)
    }
}

/// Runs every split, aggregates, tests significance and (with `out`)
/// writes the summary, per-split metrics, predictions, checkpoints and plots.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&OutputDir>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cohort = load_cohort_source(&cfg.cohort)?;
    cohort.validate()?;
    let mut lambdas = Vec::new();
    let mut roc = Vec::new();
    let repeated = repeated_split_eval(cfg.eval.n_splits, cfg.seed, |i, _| {
        let o = run_split(&cohort, cfg, i, out)?;
        lambdas.push(o.lambda);
        if roc.is_empty() {
            roc = o.roc;
        }
        Ok(o.results)
    })?;
    let summary = summarize(cfg, &cohort, &repeated, &lambdas);
    if let Some(out) = out {
        write_outputs(out, cfg, &cohort, &repeated, &summary, roc)?;
    }
    Ok(ExperimentReport {
        repeated,
        lambdas,
        summary,
    })
}

fn summarize(cfg: &ExperimentConfig, cohort: &Cohort, rep: &RepeatedResult, lambdas: &[LambdaRecord]) -> Value {
    let th = cohort.history_len;
    let k = cohort.horizons;
    let table: Vec<&crate::eval::AggregateRow> = [(TEACHER, th), (BASELINE, 0), (PHD, 0)]
        .iter()
        .filter_map(|(m, h)| rep.row(m, *h))
        .collect();
    let mut significance = serde_json::Map::new();
    for (a, b) in [(PHD, BASELINE), (PHD, SINGLE_TEACHER), (SINGLE_TEACHER, BASELINE)] {
        let p: Vec<Option<f64>> = (1..=k)
            .map(|h| {
                let x = rep.per_split_pauc(a, 0, h);
                let y = rep.per_split_pauc(b, 0, h);
                (x.len() == y.len()).then(|| wilcoxon_signed_rank(&x, &y).ok()).flatten()
            })
            .collect();
        significance.insert(format!("{a}_vs_{b}"), json!({ "pauc_p_value": p }));
    }
    json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "cohort": cohort.summary().n_patients,
        "splits_completed": rep.splits.len(),
        "failures": rep.failures,
        "table": table,
        "rows": rep.aggregate,
        "lambda": lambdas,
        "significance": significance,
    })
}

fn write_outputs(
    out: &OutputDir,
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    rep: &RepeatedResult,
    summary: &Value,
    roc: Vec<(String, Vec<(f64, f64)>)>,
) -> Result<()> {
    let path = out.file("summary.json")?;
    fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(|e| PhdError::io(&path, e))?;
    let path = out.file("config.json")?;
    fs::write(&path, serde_json::to_string_pretty(cfg)?).map_err(|e| PhdError::io(&path, e))?;
    write_metric_rows(
        &out.file("results/metrics.csv")?,
        rep.splits.iter().flat_map(|s| s.models.iter().map(move |m| (s.split, m))),
    )?;

    let k = cohort.horizons;
    let th = cohort.history_len;
    let point = |m: &str, h: usize| {
        rep.row(m, h)
            .and_then(|r| r.pauc[k - 1])
            .map(|v| (h, v.mean, v.std))
    };
    let history = [TEACHER, MULTITASK, PHD]
        .iter()
        .map(|m| (m.to_string(), (0..=th).filter_map(|h| point(m, h)).collect::<Vec<_>>()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let ladder = [(BASELINE, 0), (SINGLE_TEACHER, 0), (PHD, 0), (TEACHER, th)]
        .iter()
        .filter_map(|&(m, h)| point(m, h).map(|(_, mean, std)| (format!("{m} (#H={h})"), mean, std)))
        .collect();
    let art = CurveArtifacts {
        horizon: k,
        fpr_max: cfg.eval.fpr_max,
        roc,
        history,
        ladder,
    };
    emit_curves(&out.root.join("plots"), &art)?;
    Ok(())
}

/// Loads a checkpoint and checks it was produced under `expected_hash`
/// unless `allow_mismatch` is set.
pub fn load_checkpoint(path: &Path, expected_hash: &str, allow_mismatch: bool) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.config_hash != expected_hash {
        if allow_mismatch {
            log::warn!("{}: config hash mismatch ignored", path.display());
        } else {
            return Err(PhdError::HashMismatch {
                path: path.to_path_buf(),
                found: ckpt.config_hash.clone(),
                expected: expected_hash.to_string(),
            });
        }
    }
    Ok(ckpt)
}
