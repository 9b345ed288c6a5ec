use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::kd::{check_coefficients, logit_kd_node, total_node};
use super::model::{HistoryModel, ModelSpec, StudentModel, TeacherBundle};
use crate::data::LabelVector;
use crate::embedding::SampleTable;
use crate::error::{PhdError, Result};
use crate::eval::{auc, horizon_column, HorizonMetrics, PaucMode};
use crate::nn::{cosine_lr, Adam, Graph, Mat, ParamStore, Var};
use crate::reconstruction::feature_kd_node;
use crate::risk::{compute_pos_weights, rce_node};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_logit: f64,
    pub lambda_feature: f64,
    pub lr: f64,
    /// Decoupled weight decay on weight matrices.
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Epochs of feature-only predictor training before joint training.
    pub feature_pretrain_epochs: usize,
    pub max_pos_weight: f64,
    /// Start each uni-task expert from the multi-task teacher's weights.
    pub expert_warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_logit: 1.0,
            lambda_feature: 1.0,
            lr: 3e-4,
            weight_decay: 0.0,
            epochs: 30,
            patience: 5,
            batch_size: 64,
            seed: 0,
            temperature: 1.0,
            feature_pretrain_epochs: 0,
            max_pos_weight: 100.0,
            expert_warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(PhdError::Config {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.lambda_logit >= 0.0) {
            return bad("lambda_logit", "must be non-negative");
        }
        if !(self.lambda_feature >= 0.0) {
            return bad("lambda_feature", "must be non-negative");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature", "must be positive");
        }
        if !(self.max_pos_weight >= 1.0) {
            return bad("max_pos_weight", "must be at least 1");
        }
        Ok(())
    }
}

/// Derives a sub-seed so that different models trained from one master
/// seed start from unrelated initializations.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
        h ^= h >> 29;
    }
    h ^ (h >> 31)
}

/// Per-epoch JSON records plus counters.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<Value>,
    pub degenerate_dropped: usize,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PhdError::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| PhdError::io(path, e))?;
        for r in &self.records {
            writeln!(f, "{r}").map_err(|e| PhdError::io(path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub stage: String,
    /// `None` when the starting parameters were never beaten.
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub epochs_run: usize,
    pub log: TrainLog,
}

/// One mini-batch objective: the graph, its scalar loss and named parts.
pub struct Step {
    pub graph: Graph,
    pub loss: Var,
    pub parts: Vec<(&'static str, Var)>,
}

/// Adam with a per-epoch cosine schedule and early stopping on a
/// validation metric (higher is better). The best parameters are restored.
/// With `score_initial` the starting parameters compete as well.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    stage: &str,
    store: &mut ParamStore,
    n_rows: usize,
    cfg: &TrainConfig,
    epochs: usize,
    patience: Option<usize>,
    score_initial: bool,
    log: &mut TrainLog,
    mut step: impl FnMut(&ParamStore, &[usize], &mut ChaCha8Rng) -> Result<Option<Step>>,
    mut validate: impl FnMut(&ParamStore) -> Result<(f64, Value)>,
) -> Result<FitReport> {
    if n_rows == 0 {
        return Err(PhdError::Training(format!("{stage}: no training samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stage));
    let mut adam = Adam::new(store);
    adam.weight_decay = cfg.weight_decay;
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut best = (f64::NEG_INFINITY, None, store.clone());
    if score_initial {
        let (metric, detail) = validate(store)?;
        log.records.push(json!({ "stage": stage, "epoch": "initial", "val_metric": metric, "val": detail }));
        best.0 = metric;
    }
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let lr = cosine_lr(cfg.lr, epoch, epochs);
        let mut sums: Vec<(&'static str, f64)> = Vec::new();
        let mut n_batches = 0usize;
        for rows in order.chunks(cfg.batch_size) {
            let Some(s) = step(store, rows, &mut rng)? else {
                continue;
            };
            let loss = s.graph.scalar(s.loss);
            if !loss.is_finite() {
                return Err(PhdError::Numeric(format!(
                    "{stage}: non-finite loss at epoch {epoch}"
                )));
            }
            if sums.is_empty() {
                sums.push(("loss", 0.0));
                sums.extend(s.parts.iter().map(|(n, _)| (*n, 0.0)));
            }
            sums[0].1 += loss;
            for (acc, (_, v)) in sums[1..].iter_mut().zip(&s.parts) {
                acc.1 += s.graph.scalar(*v);
            }
            let grads = s.graph.backward(s.loss).params(store.len());
            adam.step(store, &grads, lr);
            n_batches += 1;
        }
        epochs_run = epoch + 1;
        let mut rec = serde_json::Map::new();
        rec.insert("stage".into(), json!(stage));
        rec.insert("epoch".into(), json!(epoch));
        rec.insert("lr".into(), json!(lr));
        for (name, total) in &sums {
            rec.insert((*name).into(), json!(total / n_batches.max(1) as f64));
        }
        let (metric, detail) = validate(store)?;
        rec.insert("val_metric".into(), json!(metric));
        rec.insert("val".into(), detail);
        debug!("{}", Value::Object(rec.clone()));
        log.records.push(Value::Object(rec));
        if metric > best.0 {
            best = (metric, Some(epoch), store.clone());
            stale = 0;
        } else {
            stale += 1;
            if patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    store.copy_from(&best.2);
    info!(
        "{stage}: best val metric {:.4} at epoch {:?} ({} epochs run)",
        best.0, best.1, epochs_run
    );
    Ok(FitReport {
        stage: stage.to_string(),
        best_epoch: best.1,
        best_metric: best.0,
        epochs_run,
        log: log.clone(),
    })
}

fn select_labels(labels: &[LabelVector], rows: &[usize]) -> Vec<LabelVector> {
    rows.iter().map(|&r| labels[r].clone()).collect()
}

/// Indices of rows with at least one known horizon.
fn usable_rows(labels: &[LabelVector]) -> Vec<usize> {
    (0..labels.len()).filter(|&r| !labels[r].all_masked()).collect()
}

fn mean_auc_detail(probs: &Mat, labels: &[LabelVector]) -> Result<(f64, Value)> {
    let m = HorizonMetrics::compute(probs, labels, 1.0, PaucMode::McClish)?;
    let mean = m
        .mean_auc()
        .ok_or_else(|| PhdError::Training("validation split has no horizon with both classes".into()))?;
    Ok((mean, json!({ "auc": m.auc })))
}

/// Trains one history model on `train` (with whatever priors its table
/// holds). `horizon = Some(k)` (1-based) gives a uni-task expert trained and
/// selected on horizon `k` only; `None` trains all horizons jointly.
/// Training starts from `init` when given, otherwise from a fresh model.
pub fn train_history_model(
    stage: &str,
    spec: &ModelSpec,
    train: &SampleTable,
    val: &SampleTable,
    cfg: &TrainConfig,
    horizon: Option<usize>,
    init: Option<&HistoryModel>,
) -> Result<(HistoryModel, FitReport)> {
    cfg.validate()?;
    let k_all = spec.horizons;
    if train.horizons() != k_all {
        return Err(PhdError::invalid(format!(
            "training labels have {} horizons, model has {k_all}",
            train.horizons()
        )));
    }
    let labels: Vec<LabelVector> = match horizon {
        Some(k) => {
            if k == 0 || k > k_all {
                return Err(PhdError::invalid(format!("horizon {k} outside 1..={k_all}")));
            }
            train.labels.iter().map(|l| l.restricted_to(k - 1)).collect()
        }
        None => train.labels.clone(),
    };
    // Weights come from the full labels so that masked-out horizons of a
    // uni-task expert do not leave empty counts; `w_k` itself is identical.
    let weights = compute_pos_weights(&train.labels, k_all, cfg.max_pos_weight)?;
    if let Some(k) = horizon {
        if weights.positives[k - 1] == 0 {
            return Err(PhdError::Training(format!(
                "{stage}: no positive training samples at horizon {k}"
            )));
        }
    }
    let rows = usable_rows(&labels);
    let mut log = TrainLog {
        degenerate_dropped: labels.len() - rows.len(),
        ..Default::default()
    };
    let mut model = match init {
        Some(m) if m.spec == *spec => m.clone(),
        Some(_) => return Err(PhdError::invalid(format!("{stage}: initial model has a different spec"))),
        None => HistoryModel::new(spec.clone(), derive_seed(cfg.seed, &format!("{stage}.init"))),
    };
    let mut store = model.store.clone();
    let probe = model.clone();
    let step = |store: &ParamStore, batch_rows: &[usize], rng: &mut ChaCha8Rng| -> Result<Option<Step>> {
        let idx: Vec<usize> = batch_rows.iter().map(|&i| rows[i]).collect();
        let batch = train.batch.select(&idx);
        let mut g = Graph::new();
        let p = probe.forward(&mut g, store, &batch, Some(rng))?;
        let Some((loss, _)) = rce_node(&mut g, p, &select_labels(&labels, &idx), &weights.weights) else {
            return Ok(None);
        };
        Ok(Some(Step {
            graph: g,
            loss,
            parts: vec![("rce", loss)],
        }))
    };
    let validate = |store: &ParamStore| -> Result<(f64, Value)> {
        let mut m = probe.clone();
        m.store.copy_from(store);
        let probs = m.predict(&val.batch)?;
        match horizon {
            Some(k) => {
                let (s, y) = horizon_column(&probs, &val.labels, k - 1);
                let a = auc(&s, &y)?;
                Ok((a, json!({ "horizon": k, "auc": a })))
            }
            None => mean_auc_detail(&probs, &val.labels),
        }
    };
    let report = fit(
        stage,
        &mut store,
        rows.len(),
        cfg,
        cfg.epochs,
        Some(cfg.patience),
        init.is_some(),
        &mut log,
        step,
        validate,
    )?;
    model.store = store;
    Ok((model, report))
}

/// Trains one uni-task expert per horizon on full-history samples, each
/// starting from `init` when given.
pub fn train_teachers(
    spec: &ModelSpec,
    train: &SampleTable,
    val: &SampleTable,
    cfg: &TrainConfig,
    init: Option<&HistoryModel>,
) -> Result<(TeacherBundle, Vec<FitReport>)> {
    let mut experts = Vec::with_capacity(spec.horizons);
    let mut reports = Vec::with_capacity(spec.horizons);
    for k in 1..=spec.horizons {
        let (m, r) = train_history_model(&format!("teacher{k}"), spec, train, val, cfg, Some(k), init)?;
        experts.push(m);
        reports.push(r);
    }
    Ok((TeacherBundle::uni_task(experts)?, reports))
}

/// Trains a student on current exams. Logit KD uses `teachers` (required
/// when `lambda_logit > 0`); feature KD uses the true priors held by
/// `train`. Validation sees only `val`'s current exams.
pub fn train_student(
    stage: &str,
    spec: &ModelSpec,
    train: &SampleTable,
    val: &SampleTable,
    cfg: &TrainConfig,
    teachers: Option<&TeacherBundle>,
) -> Result<(StudentModel, FitReport)> {
    cfg.validate()?;
    check_coefficients(cfg.lambda_logit, cfg.lambda_feature)?;
    if train.horizons() != spec.horizons {
        return Err(PhdError::invalid("training labels and model disagree on horizons"));
    }
    let teacher_probs = match (cfg.lambda_logit > 0.0, teachers) {
        (false, _) => None,
        (true, None) => {
            return Err(PhdError::Dependency(
                "logit distillation needs trained teachers".into(),
            ))
        }
        (true, Some(t)) => {
            if t.horizons() != spec.horizons {
                return Err(PhdError::invalid(format!(
                    "teachers cover {} horizons, student has {}",
                    t.horizons(),
                    spec.horizons
                )));
            }
            Some(t.probs(&train.batch)?)
        }
    };
    let weights = compute_pos_weights(&train.labels, spec.horizons, cfg.max_pos_weight)?;
    let rows = usable_rows(&train.labels);
    let mut log = TrainLog {
        degenerate_dropped: train.len() - rows.len(),
        ..Default::default()
    };
    let mut model = StudentModel::new(spec.clone(), derive_seed(cfg.seed, &format!("{stage}.init")));
    let mut store = model.store.clone();
    let probe = model.clone();
    let ax = ndarray::Axis(0);

    let feature_targets = |idx: &[usize]| -> (Vec<Mat>, Vec<Vec<bool>>) {
        let b = &train.batch;
        (
            b.priors.iter().map(|p| p.select(ax, idx)).collect(),
            b.available.iter().map(|a| idx.iter().map(|&r| a[r]).collect()).collect(),
        )
    };

    if cfg.feature_pretrain_epochs > 0 && cfg.lambda_feature > 0.0 {
        let pre_stage = format!("{stage}.feature");
        let pre_step = |store: &ParamStore, batch_rows: &[usize], rng: &mut ChaCha8Rng| -> Result<Option<Step>> {
            let idx: Vec<usize> = batch_rows.iter().map(|&i| rows[i]).collect();
            let current = train.batch.current.select(ax, &idx);
            let mut g = Graph::new();
            let (recon, _) = probe.forward(&mut g, store, &current, Some(rng))?;
            let (targets, avail) = feature_targets(&idx);
            Ok(feature_kd_node(&mut g, &recon, &targets, &avail).map(|loss| Step {
                graph: g,
                loss,
                parts: vec![("feature_kd", loss)],
            }))
        };
        let pre_val = |store: &ParamStore| -> Result<(f64, Value)> {
            let mut m = probe.clone();
            m.store.copy_from(store);
            let recon = m.reconstruct(&val.batch.current)?;
            let mse = masked_mse(&recon, &val.batch.priors, &val.batch.available);
            Ok((-mse, json!({ "feature_mse": mse })))
        };
        fit(
            &pre_stage,
            &mut store,
            rows.len(),
            cfg,
            cfg.feature_pretrain_epochs,
            None,
            false,
            &mut log,
            pre_step,
            pre_val,
        )?;
    }

    let step = |store: &ParamStore, batch_rows: &[usize], rng: &mut ChaCha8Rng| -> Result<Option<Step>> {
        let idx: Vec<usize> = batch_rows.iter().map(|&i| rows[i]).collect();
        let current = train.batch.current.select(ax, &idx);
        let labels = select_labels(&train.labels, &idx);
        let mut g = Graph::new();
        let (recon, p) = probe.forward(&mut g, store, &current, Some(rng))?;
        let Some((rce, _)) = rce_node(&mut g, p, &labels, &weights.weights) else {
            return Ok(None);
        };
        let mut parts = vec![("rce", rce)];
        let kd = match &teacher_probs {
            Some(tp) => logit_kd_node(&mut g, p, &tp.select(ax, &idx), &labels, cfg.temperature),
            None => None,
        };
        if let Some(v) = kd {
            parts.push(("logit_kd", v));
        }
        let feat = if cfg.lambda_feature > 0.0 {
            let (targets, avail) = feature_targets(&idx);
            feature_kd_node(&mut g, &recon, &targets, &avail)
        } else {
            None
        };
        if let Some(v) = feat {
            parts.push(("feature_kd", v));
        }
        let loss = total_node(&mut g, rce, kd, feat, cfg.lambda_logit, cfg.lambda_feature);
        Ok(Some(Step { graph: g, loss, parts }))
    };
    let validate = |store: &ParamStore| -> Result<(f64, Value)> {
        let mut m = probe.clone();
        m.store.copy_from(store);
        mean_auc_detail(&m.predict(&val.batch.current)?, &val.labels)
    };
    let report = fit(
        stage,
        &mut store,
        rows.len(),
        cfg,
        cfg.epochs,
        Some(cfg.patience),
        false,
        &mut log,
        step,
        validate,
    )?;
    if let Some(t) = teachers {
        t.verify()?;
    }
    model.store = store;
    Ok((model, report))
}

fn masked_mse(pred: &[Mat], target: &[Mat], available: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((p, t), a) in pred.iter().zip(target).zip(available) {
        for (r, &on) in a.iter().enumerate() {
            if on {
                total += (&p.row(r) - &t.row(r)).mapv(|d| d * d).sum();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Outcome of a validation search over the logit-KD weight.
#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    /// `(lambda, best validation metric)` for every grid value.
    pub scores: Vec<(f64, f64)>,
    pub model: StudentModel,
    pub report: FitReport,
}

/// Trains one student per grid value and keeps the best on validation
/// (ties go to the smaller weight).
pub fn tune_lambda(
    stage: &str,
    spec: &ModelSpec,
    train: &SampleTable,
    val: &SampleTable,
    cfg: &TrainConfig,
    teachers: &TeacherBundle,
    grid: &[f64],
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(PhdError::invalid("empty lambda grid"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, StudentModel, FitReport)> = None;
    let mut scores = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let c = TrainConfig {
            lambda_logit: lambda,
            ..cfg.clone()
        };
        let (m, r) = train_student(&format!("{stage}.lambda{lambda}"), spec, train, val, &c, Some(teachers))?;
        scores.push((lambda, r.best_metric));
        if best.as_ref().is_none_or(|b| r.best_metric > b.2.best_metric) {
            best = Some((lambda, m, r));
        }
    }
    let (best_lambda, model, report) = best.expect("grid is non-empty");
    info!("{stage}: selected lambda_logit={best_lambda}");
    Ok(LambdaSearch {
        best_lambda,
        scores,
        model,
        report,
    })
}
