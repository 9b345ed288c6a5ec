use serde::{Deserialize, Serialize};

use super::labels::{derive_labels, LabelVector};
use crate::error::{PhdError, Result};

/// One screening exam. `relative_year` is measured from the patient's
/// reference (most recent) exam, so it is `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub relative_year: i32,
    /// Visit embedding. Empty until computed from `views` when a cohort
    /// carries raw view features instead.
    pub embedding: Vec<f32>,
    /// Per-view payloads or precomputed view features (up to four).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<Vec<f32>>,
    pub available: bool,
}

impl ExamRecord {
    pub fn with_embedding(relative_year: i32, embedding: Vec<f32>) -> Self {
        Self {
            relative_year,
            embedding,
            views: Vec::new(),
            available: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub exams: Vec<ExamRecord>,
    /// Years from the reference exam to diagnosis, if diagnosed.
    pub diagnosis_year: Option<i32>,
    /// Last year (relative to the reference exam) with known outcome.
    pub censor_year: i32,
    /// Labels relative to the reference exam.
    pub labels: LabelVector,
}

impl PatientRecord {
    pub fn new(
        patient_id: impl Into<String>,
        exams: Vec<ExamRecord>,
        diagnosis_year: Option<i32>,
        censor_year: i32,
        horizons: usize,
    ) -> Result<Self> {
        let labels = derive_labels(diagnosis_year, censor_year, horizons)?;
        let p = Self {
            patient_id: patient_id.into(),
            exams,
            diagnosis_year,
            censor_year,
            labels,
        };
        p.validate(horizons)?;
        Ok(p)
    }

    pub fn validate(&self, horizons: usize) -> Result<()> {
        if self.exams.is_empty() {
            return Err(PhdError::invalid(format!(
                "patient {} has no exams",
                self.patient_id
            )));
        }
        if self
            .exams
            .windows(2)
            .any(|w| w[0].relative_year >= w[1].relative_year)
        {
            return Err(PhdError::invalid(format!(
                "patient {}: exam years must be strictly increasing",
                self.patient_id
            )));
        }
        if self.exams.last().map(|e| e.relative_year) > Some(0) {
            return Err(PhdError::invalid(format!(
                "patient {}: exam years must be <= 0 relative to the reference exam",
                self.patient_id
            )));
        }
        let expected = derive_labels(self.diagnosis_year, self.censor_year, horizons)?;
        if expected != self.labels {
            return Err(PhdError::invalid(format!(
                "patient {}: stored labels {:?} disagree with outcome times ({:?})",
                self.patient_id,
                self.labels.as_slice(),
                expected.as_slice()
            )));
        }
        Ok(())
    }

    /// Labels when exam `exam_index` is treated as the current exam.
    pub fn labels_at(&self, exam_index: usize, horizons: usize) -> Result<LabelVector> {
        let exam = self.exams.get(exam_index).ok_or_else(|| {
            PhdError::invalid(format!(
                "exam index {exam_index} out of range for patient {}",
                self.patient_id
            ))
        })?;
        let shift = -exam.relative_year;
        derive_labels(
            self.diagnosis_year.map(|d| d + shift),
            self.censor_year + shift,
            horizons,
        )
    }
}

/// A cohort of patients sharing one embedding dimensionality and horizon set.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub dim: usize,
    pub horizons: usize,
    pub history_len: usize,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.horizons == 0 {
            return Err(PhdError::invalid("cohort dimensions must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(PhdError::invalid(format!(
                    "duplicate patient id {}",
                    p.patient_id
                )));
            }
            p.validate(self.horizons)?;
            for e in &p.exams {
                if e.embedding.len() != self.dim {
                    return Err(PhdError::invalid(format!(
                        "patient {}: embedding has dim {}, cohort declares {}",
                        p.patient_id,
                        e.embedding.len(),
                        self.dim
                    )));
                }
                if e.embedding.iter().any(|x| !x.is_finite()) {
                    return Err(PhdError::invalid(format!(
                        "patient {}: non-finite embedding entry",
                        p.patient_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_exams(&self) -> usize {
        self.patients.iter().map(|p| p.exams.len()).sum()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    /// Index lookup by patient id.
    pub fn index_of(&self) -> std::collections::HashMap<&str, usize> {
        self.patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.as_str(), i))
            .collect()
    }

    pub fn summary(&self) -> CohortSummary {
        let mut positives = vec![0usize; self.horizons];
        let mut known = vec![0usize; self.horizons];
        for p in &self.patients {
            for k in 0..self.horizons {
                match p.labels.get(k) {
                    1 => {
                        positives[k] += 1;
                        known[k] += 1;
                    }
                    0 => known[k] += 1,
                    _ => {}
                }
            }
        }
        let prevalence = positives
            .iter()
            .zip(&known)
            .map(|(&p, &n)| if n == 0 { 0.0 } else { p as f64 / n as f64 })
            .collect();
        CohortSummary {
            n_patients: self.patients.len(),
            n_exams: self.n_exams(),
            positives,
            known,
            prevalence,
        }
    }
}

/// Counts at the reference exam of each patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_patients: usize,
    pub n_exams: usize,
    pub positives: Vec<usize>,
    pub known: Vec<usize>,
    /// Positives over patients with a known label, per horizon.
    pub prevalence: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exam(year: i32) -> ExamRecord {
        ExamRecord::with_embedding(year, vec![0.0; 2])
    }

    #[test]
    fn labels_shift_with_current_exam() {
        let p = PatientRecord::new("a", vec![exam(-2), exam(-1), exam(0)], Some(2), 4, 5).unwrap();
        assert_eq!(p.labels.as_slice(), &[0, 1, 1, 1, 1]);
        assert_eq!(p.labels_at(0, 5).unwrap().as_slice(), &[0, 0, 0, 1, 1]);
        assert!(p.labels_at(3, 5).is_err());
    }

    #[test]
    fn rejects_unordered_exams() {
        assert!(PatientRecord::new("a", vec![exam(-1), exam(-1)], None, 3, 5).is_err());
        assert!(PatientRecord::new("a", vec![exam(0), exam(-1)], None, 3, 5).is_err());
        assert!(PatientRecord::new("a", vec![exam(1)], None, 3, 5).is_err());
    }

    #[test]
    fn summary_counts_known_labels() {
        let c = Cohort {
            dim: 2,
            horizons: 2,
            history_len: 1,
            patients: vec![
                PatientRecord::new("a", vec![exam(0)], Some(1), 0, 2).unwrap(),
                PatientRecord::new("b", vec![exam(0)], None, 1, 2).unwrap(),
            ],
        };
        c.validate().unwrap();
        let s = c.summary();
        assert_eq!(s.positives, vec![1, 1]);
        assert_eq!(s.known, vec![2, 1]);
        assert_eq!(s.prevalence, vec![0.5, 1.0]);
    }
}
