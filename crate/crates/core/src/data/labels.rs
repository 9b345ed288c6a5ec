use serde::{Deserialize, Serialize};

use crate::error::{PhdError, Result};

pub const MASKED: i8 = -1;

/// Multi-horizon outcome vector: entry `k-1` is 1 when the event happened
/// within `k` years, 0 when the patient was followed event-free through
/// year `k`, and -1 when the outcome at that horizon is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.is_empty() {
            return Err(PhdError::invalid("label vector needs at least one horizon"));
        }
        if values.iter().any(|v| !matches!(v, -1..=1)) {
            return Err(PhdError::invalid("labels must be in {0, 1, -1}"));
        }
        let lv = LabelVector(values);
        if !lv.is_monotone() {
            return Err(PhdError::invalid(format!(
                "labels {:?} violate monotone-once-positive",
                lv.0
            )));
        }
        if !lv.has_censoring_suffix() {
            return Err(PhdError::invalid(format!(
                "labels {:?} violate the censoring suffix rule",
                lv.0
            )));
        }
        Ok(lv)
    }

    pub fn horizons(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, k: usize) -> i8 {
        self.0[k]
    }

    pub fn is_known(&self, k: usize) -> bool {
        self.0[k] != MASKED
    }

    pub fn mask(&self) -> Vec<bool> {
        self.0.iter().map(|&y| y != MASKED).collect()
    }

    pub fn all_masked(&self) -> bool {
        self.0.iter().all(|&y| y == MASKED)
    }

    /// Copy with every horizon except `k` masked.
    pub fn restricted_to(&self, k: usize) -> LabelVector {
        let v = self
            .0
            .iter()
            .enumerate()
            .map(|(j, &y)| if j == k { y } else { MASKED })
            .collect();
        LabelVector(v)
    }

    pub fn is_monotone(&self) -> bool {
        match self.0.iter().position(|&y| y == 1) {
            Some(first) => self.0[first..].iter().all(|&y| y != 0),
            None => true,
        }
    }

    pub fn has_censoring_suffix(&self) -> bool {
        match self.0.iter().position(|&y| y == MASKED) {
            Some(first) => self.0[first..].iter().all(|&y| y == MASKED),
            None => true,
        }
    }
}

/// Labels for horizons `1..=horizons` from a diagnosis year and the last
/// year with known outcome, both relative to the current exam.
///
/// A diagnosis makes the outcome known up to the diagnosis year, so it
/// overrides censoring for every horizon at or after it.
pub fn derive_labels(
    diagnosis_year: Option<i32>,
    censor_year: i32,
    horizons: usize,
) -> Result<LabelVector> {
    if horizons == 0 {
        return Err(PhdError::invalid("number of horizons must be positive"));
    }
    if censor_year < 0 {
        return Err(PhdError::invalid(format!(
            "censor year {censor_year} must be >= 0"
        )));
    }
    if let Some(d) = diagnosis_year {
        if d < 1 {
            return Err(PhdError::invalid(format!("diagnosis year {d} must be >= 1")));
        }
    }
    let known_through = match diagnosis_year {
        Some(d) => censor_year.max(d),
        None => censor_year,
    };
    let labels = (1..=horizons as i32)
        .map(|k| match diagnosis_year {
            Some(d) if d <= k => 1,
            _ if known_through >= k => 0,
            _ => MASKED,
        })
        .collect();
    Ok(LabelVector(labels))
}
