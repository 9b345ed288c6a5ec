use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cohort::Cohort;
use crate::error::{PhdError, Result};

/// Patient-level partition of a cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.test_ids)
            .all(|id| seen.insert(id))
    }

    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits patients (never exams) into train/val/test. `train_frac` of the
/// patients go to train+val, and `val_frac_of_train` of those to val.
pub fn patient_level_split(
    cohort: &Cohort,
    train_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<CohortSplit> {
    for (name, f) in [("train_frac", train_frac), ("val_frac_of_train", val_frac_of_train)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(PhdError::invalid(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let n = cohort.len();
    if n < 3 {
        return Err(PhdError::invalid(format!(
            "need at least 3 patients to split, got {n}"
        )));
    }
    let mut ids: Vec<String> = cohort.patients.iter().map(|p| p.patient_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_test = ((n as f64 * (1.0 - train_frac)).round() as usize).clamp(1, n - 2);
    let n_trainval = n - n_test;
    let n_val = ((n_trainval as f64 * val_frac_of_train).round() as usize).clamp(1, n_trainval - 1);

    let test_ids = ids[..n_test].to_vec();
    let val_ids = ids[n_test..n_test + n_val].to_vec();
    let train_ids = ids[n_test + n_val..].to_vec();
    Ok(CohortSplit {
        train_ids,
        val_ids,
        test_ids,
        seed,
    })
}
