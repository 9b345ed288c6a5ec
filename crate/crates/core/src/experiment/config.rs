use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::distill::TrainConfig;
use crate::error::{PhdError, Result};
use crate::eval::{EvalSettings, PaucMode};
use crate::reconstruction::PredictorConfig;
use crate::risk::AggregatorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CohortSource {
    Synthetic(SynthConfig),
    /// Path to a cohort manifest written by `gen-data`.
    File(PathBuf),
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub aggregator: AggregatorConfig,
    pub predictor: PredictorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_splits: usize,
    pub train_frac: f64,
    pub val_frac_of_train: f64,
    pub lambda_grid: Vec<f64>,
    /// Reuse the tuned logit-KD weight for the single-teacher student
    /// instead of searching the grid again.
    pub reuse_lambda_for_single: bool,
    /// Single-exam resamples per evaluation.
    pub repetitions: usize,
    pub fpr_max: f64,
    pub pauc_mode: PaucMode,
}

impl EvalConfig {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            repetitions: self.repetitions,
            fpr_max: self.fpr_max,
            pauc_mode: self.pauc_mode,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_splits: 10,
            train_frac: 0.8,
            val_frac_of_train: 0.25,
            lambda_grid: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            reuse_lambda_for_single: true,
            repetitions: 100,
            fpr_max: 0.1,
            pauc_mode: PaucMode::McClish,
        }
    }
}

/// A complete experiment description. Everything written by a run can be
/// regenerated from this document and its master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub cohort: CohortSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cohort: CohortSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("phd-out"),
            seed: 0,
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> PhdError {
    PhdError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => PhdError::Config {
                field: data_error_field(&e.to_string()),
                message: format!("{e}"),
            },
            _ => PhdError::Parse {
                source_name: source_name.to_string(),
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            },
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PhdError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if let CohortSource::Synthetic(s) = &self.cohort {
            s.validate()?;
        }
        self.train.validate()?;
        let agg = &self.model.aggregator;
        if agg.d_model == 0 || agg.heads == 0 || agg.d_model % agg.heads != 0 {
            return Err(field_err("model.aggregator.heads", "d_model must be a positive multiple of heads"));
        }
        if !(0.0..1.0).contains(&agg.dropout) {
            return Err(field_err("model.aggregator.dropout", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.model.predictor.dropout) {
            return Err(field_err("model.predictor.dropout", "must lie in [0, 1)"));
        }
        if self.model.predictor.hidden == 0 {
            return Err(field_err("model.predictor.hidden", "must be positive"));
        }
        let e = &self.eval;
        if e.n_splits == 0 {
            return Err(field_err("eval.n_splits", "must be at least 1"));
        }
        if !(e.train_frac > 0.0 && e.train_frac < 1.0) {
            return Err(field_err("eval.train_frac", "must lie in (0, 1)"));
        }
        if !(e.val_frac_of_train > 0.0 && e.val_frac_of_train < 1.0) {
            return Err(field_err("eval.val_frac_of_train", "must lie in (0, 1)"));
        }
        if e.lambda_grid.is_empty() || e.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(field_err("eval.lambda_grid", "needs at least one non-negative value"));
        }
        if e.repetitions == 0 {
            return Err(field_err("eval.repetitions", "must be at least 1"));
        }
        if !(e.fpr_max > 0.0 && e.fpr_max <= 1.0) {
            return Err(field_err("eval.fpr_max", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted) JSON of everything except the
    /// output directory, which may be redirected without changing results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Best-effort field name from a serde data error such as
/// "unknown field `foo`, expected ..." or "invalid type ... for key `x`".
fn data_error_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}
