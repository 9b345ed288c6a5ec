//! A tiny synthetic world for fast end-to-end checks.

use phd_core::data::{generate_synthetic_cohort, patient_level_split, Cohort, CohortSplit, SynthConfig};
use phd_core::distill::{ModelSpec, TrainConfig};
use phd_core::embedding::SampleTable;
use phd_core::reconstruction::PredictorConfig;
use phd_core::risk::AggregatorConfig;

pub struct World {
    pub cohort: Cohort,
    pub split: CohortSplit,
    /// Full-history training and validation tables.
    pub train: SampleTable,
    pub val: SampleTable,
    pub test: SampleTable,
    pub spec: ModelSpec,
}

pub fn world(seed: u64) -> World {
    let cohort = generate_synthetic_cohort(&SynthConfig {
        n_patients: 160,
        dim: 12,
        seed,
        // A higher base rate keeps every horizon populated in so few patients.
        base_logit: -4.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = patient_level_split(&cohort, 0.8, 0.25, seed).unwrap();
    let th = cohort.history_len;
    let train = SampleTable::build(&cohort, &split.train_ids, th).unwrap();
    let val = SampleTable::build(&cohort, &split.val_ids, th).unwrap();
    let test = SampleTable::build(&cohort, &split.test_ids, th).unwrap();
    let spec = ModelSpec {
        dim: cohort.dim,
        history_len: th,
        horizons: cohort.horizons,
        aggregator: AggregatorConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            ffn: 8,
            ..AggregatorConfig::default()
        },
        predictor: PredictorConfig {
            hidden: 8,
            ..PredictorConfig::default()
        },
    };
    World {
        cohort,
        split,
        train,
        val,
        test,
        spec,
    }
}

pub fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        patience: 2,
        batch_size: 32,
        ..TrainConfig::default()
    }
}
