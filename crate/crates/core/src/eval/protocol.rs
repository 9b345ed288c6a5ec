use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{HorizonMetrics, PaucMode};
use super::stats::mean_std;
use crate::data::{Cohort, LabelVector};
use crate::embedding::{SampleRef, SampleTable, SequenceBatch};
use crate::error::{PhdError, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Number of values behind the summary.
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

/// Metrics of one single-exam resample; `None` where the draw had one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub auc: Vec<Option<f64>>,
    pub pauc: Vec<Option<f64>>,
}

/// Per-horizon metrics averaged over single-exam resamples. A horizon's
/// entry is `None` when no repetition had both classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMetrics {
    pub auc: Vec<Option<MeanStd>>,
    pub pauc: Vec<Option<MeanStd>>,
    pub repetitions: usize,
    /// Raw values of every repetition, in draw order.
    #[serde(default)]
    pub raw: Vec<RepetitionMetrics>,
}

impl SampledMetrics {
    pub fn pauc_mean(&self, horizon: usize) -> Option<f64> {
        self.pauc.get(horizon - 1).copied().flatten().map(|m| m.mean)
    }

    pub fn auc_mean(&self, horizon: usize) -> Option<f64> {
        self.auc.get(horizon - 1).copied().flatten().map(|m| m.mean)
    }
}

/// Row indices grouped by patient, in order of first appearance.
pub fn patient_groups(refs: &[SampleRef]) -> Vec<Vec<usize>> {
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (row, r) in refs.iter().enumerate() {
        let g = *index.entry(r.patient).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(row);
    }
    groups
}

/// One uniformly chosen row per patient for each repetition.
pub fn single_exam_draws(groups: &[Vec<usize>], repetitions: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..repetitions)
        .map(|_| {
            groups
                .iter()
                .map(|g| g[rng.random_range(0..g.len())])
                .collect()
        })
        .collect()
}

/// Scores one exam per test patient per repetition and summarizes AUC and
/// partial AUC across repetitions.
pub fn sample_single_exam(
    probs: &Mat,
    labels: &[LabelVector],
    refs: &[SampleRef],
    repetitions: usize,
    seed: u64,
    fpr_max: f64,
    mode: PaucMode,
) -> Result<SampledMetrics> {
    if probs.nrows() != labels.len() || labels.len() != refs.len() {
        return Err(PhdError::invalid("predictions, labels and sample references differ in length"));
    }
    if repetitions == 0 {
        return Err(PhdError::invalid("need at least one repetition"));
    }
    let k = probs.ncols();
    let groups = patient_groups(refs);
    let mut auc: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut pauc: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut raw = Vec::with_capacity(repetitions);
    for rows in single_exam_draws(&groups, repetitions, seed) {
        let p = probs.select(ndarray::Axis(0), &rows);
        let l: Vec<LabelVector> = rows.iter().map(|&r| labels[r].clone()).collect();
        let m = HorizonMetrics::compute(&p, &l, fpr_max, mode)?;
        for h in 0..k {
            if let (Some(a), Some(pa)) = (m.auc[h], m.pauc[h]) {
                auc[h].push(a);
                pauc[h].push(pa);
            }
        }
        raw.push(RepetitionMetrics {
            auc: m.auc,
            pauc: m.pauc,
        });
    }
    Ok(SampledMetrics {
        auc: auc.iter().map(|v| MeanStd::of(v)).collect(),
        pauc: pauc.iter().map(|v| MeanStd::of(v)).collect(),
        repetitions,
        raw,
    })
}

/// Evaluation settings shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub repetitions: usize,
    pub fpr_max: f64,
    pub pauc_mode: PaucMode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            repetitions: 100,
            fpr_max: 0.1,
            pauc_mode: PaucMode::McClish,
        }
    }
}

impl EvalSettings {
    pub fn evaluate(&self, probs: &Mat, table: &SampleTable, seed: u64) -> Result<SampledMetrics> {
        sample_single_exam(
            probs,
            &table.labels,
            &table.refs,
            self.repetitions,
            seed,
            self.fpr_max,
            self.pauc_mode,
        )
    }
}

/// Metrics of one model at each history availability `#H = 0..=history_len`.
/// `predict` receives batches whose priors are truncated to `#H`.
pub fn history_ablation(
    cohort: &Cohort,
    test_ids: &[String],
    settings: &EvalSettings,
    seed: u64,
    mut predict: impl FnMut(&SequenceBatch) -> Result<Mat>,
) -> Result<Vec<(usize, SampledMetrics)>> {
    (0..=cohort.history_len)
        .map(|h| {
            let table = SampleTable::build(cohort, test_ids, h)?;
            let probs = predict(&table.batch)?;
            Ok((h, settings.evaluate(&probs, &table, seed)?))
        })
        .collect()
}

/// One evaluated model within a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub n_available: usize,
    pub metrics: SampledMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    pub seed: u64,
    pub models: Vec<ModelResult>,
}

/// Mean and spread across splits of each model's per-split mean metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub n_available: usize,
    pub auc: Vec<Option<MeanStd>>,
    pub pauc: Vec<Option<MeanStd>>,
}

impl From<&ModelResult> for AggregateRow {
    fn from(m: &ModelResult) -> Self {
        Self {
            model: m.model.clone(),
            n_available: m.n_available,
            auc: m.metrics.auc.clone(),
            pauc: m.metrics.pauc.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedResult {
    pub splits: Vec<SplitResult>,
    /// `(split index, error message)` for splits whose pipeline failed.
    pub failures: Vec<(usize, String)>,
    pub aggregate: Vec<AggregateRow>,
}

impl RepeatedResult {
    pub fn row(&self, model: &str, n_available: usize) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.model == model && r.n_available == n_available)
    }

    /// Per-split mean pAUC at `horizon` for one model, in split order.
    pub fn per_split_pauc(&self, model: &str, n_available: usize, horizon: usize) -> Vec<f64> {
        self.splits
            .iter()
            .filter_map(|s| {
                s.models
                    .iter()
                    .find(|m| m.model == model && m.n_available == n_available)
                    .and_then(|m| m.metrics.pauc_mean(horizon))
            })
            .collect()
    }
}

/// Runs `pipeline` once per split seed derived from `master_seed`, keeps
/// going past failing splits and aggregates over the completed ones.
pub fn repeated_split_eval(
    n_splits: usize,
    master_seed: u64,
    mut pipeline: impl FnMut(usize, u64) -> Result<Vec<ModelResult>>,
) -> Result<RepeatedResult> {
    if n_splits == 0 {
        return Err(PhdError::invalid("n_splits must be at least 1"));
    }
    let mut splits = Vec::new();
    let mut failures = Vec::new();
    for i in 0..n_splits {
        let seed = split_seed(master_seed, i);
        match pipeline(i, seed) {
            Ok(models) => splits.push(SplitResult {
                split: i,
                seed,
                models,
            }),
            Err(e) => {
                warn!("split {i} failed: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if splits.is_empty() {
        return Err(PhdError::Training(format!("all {n_splits} splits failed")));
    }
    let aggregate = aggregate(&splits);
    Ok(RepeatedResult {
        splits,
        failures,
        aggregate,
    })
}

pub fn split_seed(master_seed: u64, split: usize) -> u64 {
    master_seed.wrapping_mul(1_000_003).wrapping_add(split as u64)
}

pub fn aggregate(splits: &[SplitResult]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for s in splits {
        for m in &s.models {
            let key = (m.model.clone(), m.n_available);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(model, h)| {
            let found: Vec<&SampledMetrics> = splits
                .iter()
                .filter_map(|s| s.models.iter().find(|m| m.model == model && m.n_available == h))
                .map(|m| &m.metrics)
                .collect();
            let k = found.first().map_or(0, |m| m.auc.len());
            let collect = |pick: fn(&SampledMetrics, usize) -> Option<MeanStd>| -> Vec<Option<MeanStd>> {
                (0..k)
                    .map(|hz| {
                        let v: Vec<f64> = found.iter().filter_map(|m| pick(m, hz)).map(|x| x.mean).collect();
                        MeanStd::of(&v)
                    })
                    .collect()
            };
            AggregateRow {
                auc: collect(|m, h| m.auc[h]),
                pauc: collect(|m, h| m.pauc[h]),
                model,
                n_available: h,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(patients: &[usize]) -> Vec<SampleRef> {
        patients
            .iter()
            .enumerate()
            .map(|(i, &p)| SampleRef { patient: p, exam: i })
            .collect()
    }

    #[test]
    fn one_exam_per_patient() {
        let r = refs(&[0, 0, 1, 2, 2, 2]);
        let groups = patient_groups(&r);
        assert_eq!(groups, vec![vec![0, 1], vec![2], vec![3, 4, 5]]);
        let draws = single_exam_draws(&groups, 100, 3);
        assert_eq!(draws.len(), 100);
        for d in &draws {
            assert_eq!(d.len(), 3);
            assert!(d[0] <= 1 && d[1] == 2 && d[2] >= 3);
        }
        assert_eq!(draws, single_exam_draws(&groups, 100, 3));
    }

    #[test]
    fn aggregate_is_mean_of_splits() {
        let m = |v: f64| SampledMetrics {
            auc: vec![MeanStd::of(&[v])],
            pauc: vec![MeanStd::of(&[v / 2.0])],
            repetitions: 1,
            raw: Vec::new(),
        };
        let splits: Vec<SplitResult> = [0.6, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &v)| SplitResult {
                split: i,
                seed: i as u64,
                models: vec![ModelResult {
                    model: "a".into(),
                    n_available: 0,
                    metrics: m(v),
                }],
            })
            .collect();
        let agg = aggregate(&splits);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].auc[0].unwrap().mean - 0.7).abs() < 1e-12);
        assert!((agg[0].pauc[0].unwrap().mean - 0.35).abs() < 1e-12);
    }

    #[test]
    fn failed_split_is_recorded() {
        let r = repeated_split_eval(3, 1, |i, _| {
            if i == 1 {
                Err(PhdError::Training("boom".into()))
            } else {
                Ok(vec![])
            }
        })
        .unwrap();
        assert_eq!(r.splits.len(), 2);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].0, 1);
    }
}
