//! History sequences: the current visit embedding plus up to `T_h` prior
//! slots, one per year offset, each tagged true, reconstructed or absent.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, LabelVector, PatientRecord};
use crate::error::{PhdError, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitEmbedding {
    pub vector: Vec<f32>,
    /// Year relative to the current exam (0 for the current exam).
    pub relative_year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotSource {
    True,
    Reconstructed,
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistorySequence {
    pub current: VisitEmbedding,
    /// Slot `i` holds year `-(i + 1)`.
    pub priors: Vec<Option<VisitEmbedding>>,
    pub sources: Vec<SlotSource>,
}

impl HistorySequence {
    pub fn history_len(&self) -> usize {
        self.priors.len()
    }

    pub fn n_true(&self) -> usize {
        self.sources.iter().filter(|s| **s == SlotSource::True).count()
    }

    /// Sequence with every prior slot dropped, as seen at `#H = 0`.
    pub fn current_only(&self) -> HistorySequence {
        HistorySequence {
            current: self.current.clone(),
            priors: vec![None; self.priors.len()],
            sources: vec![SlotSource::Absent; self.priors.len()],
        }
    }
}

/// Assembles the history of exam `current_exam_index`, keeping the
/// `n_available` most recent available priors within `history_len` years.
pub fn build_history_sequence(
    patient: &PatientRecord,
    current_exam_index: usize,
    history_len: usize,
    n_available: usize,
) -> Result<HistorySequence> {
    if n_available > history_len {
        return Err(PhdError::invalid(format!(
            "n_available {n_available} exceeds history length {history_len}"
        )));
    }
    let current = patient.exams.get(current_exam_index).ok_or_else(|| {
        PhdError::invalid(format!(
            "exam index {current_exam_index} out of range for patient {} ({} exams)",
            patient.patient_id,
            patient.exams.len()
        ))
    })?;
    let year0 = current.relative_year;
    let mut priors: Vec<Option<VisitEmbedding>> = vec![None; history_len];
    let mut sources = vec![SlotSource::Absent; history_len];
    let mut kept = 0;
    // Exams are sorted by year, so walking backwards visits the most recent first.
    for exam in patient.exams[..current_exam_index].iter().rev() {
        let offset = (year0 - exam.relative_year) as usize;
        if offset > history_len || kept == n_available {
            break;
        }
        if !exam.available {
            continue;
        }
        priors[offset - 1] = Some(VisitEmbedding {
            vector: exam.embedding.clone(),
            relative_year: -(offset as i32),
        });
        sources[offset - 1] = SlotSource::True;
        kept += 1;
    }
    Ok(HistorySequence {
        current: VisitEmbedding {
            vector: current.embedding.clone(),
            relative_year: 0,
        },
        priors,
        sources,
    })
}

/// Dense batch view of history sequences: the current embeddings, one
/// matrix per prior slot (zeros where absent) and the availability mask.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub current: Mat,
    pub priors: Vec<Mat>,
    /// `available[slot][row]`.
    pub available: Vec<Vec<bool>>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.current.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.current.nrows() == 0
    }

    pub fn history_len(&self) -> usize {
        self.priors.len()
    }

    pub fn from_sequences(seqs: &[HistorySequence], dim: usize) -> Result<Self> {
        let n = seqs.len();
        let t_h = seqs.first().map(|s| s.history_len()).unwrap_or(0);
        let mut current = Array2::zeros((n, dim));
        let mut priors = vec![Array2::zeros((n, dim)); t_h];
        let mut available = vec![vec![false; n]; t_h];
        for (r, s) in seqs.iter().enumerate() {
            if s.history_len() != t_h {
                return Err(PhdError::invalid("sequences differ in history length"));
            }
            copy_row(&mut current, r, &s.current.vector, dim)?;
            for (slot, p) in s.priors.iter().enumerate() {
                if let Some(p) = p {
                    copy_row(&mut priors[slot], r, &p.vector, dim)?;
                    available[slot][r] = true;
                }
            }
        }
        Ok(Self {
            current,
            priors,
            available,
        })
    }

    /// Same current embeddings with every prior slot absent.
    pub fn without_priors(&self) -> SequenceBatch {
        let (n, d) = self.current.dim();
        SequenceBatch {
            current: self.current.clone(),
            priors: vec![Array2::zeros((n, d)); self.priors.len()],
            available: vec![vec![false; n]; self.priors.len()],
        }
    }

    pub fn select(&self, rows: &[usize]) -> SequenceBatch {
        let ax = ndarray::Axis(0);
        SequenceBatch {
            current: self.current.select(ax, rows),
            priors: self.priors.iter().map(|p| p.select(ax, rows)).collect(),
            available: self
                .available
                .iter()
                .map(|a| rows.iter().map(|&r| a[r]).collect())
                .collect(),
        }
    }
}

fn copy_row(m: &mut Mat, r: usize, v: &[f32], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(PhdError::invalid(format!(
            "embedding has dim {}, expected {dim}",
            v.len()
        )));
    }
    for (c, &x) in v.iter().enumerate() {
        m[[r, c]] = x as f64;
    }
    Ok(())
}

/// Where one row of a [`SampleTable`] came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub patient: usize,
    pub exam: usize,
}

/// Every (patient, exam) pair of a patient subset, with histories built at
/// a fixed `#H` and labels relative to that exam.
#[derive(Debug, Clone)]
pub struct SampleTable {
    pub batch: SequenceBatch,
    pub labels: Vec<LabelVector>,
    pub refs: Vec<SampleRef>,
    pub n_available: usize,
}

impl SampleTable {
    pub fn build(cohort: &Cohort, patient_ids: &[String], n_available: usize) -> Result<Self> {
        let index = cohort.index_of();
        let mut seqs = Vec::new();
        let mut labels = Vec::new();
        let mut refs = Vec::new();
        for id in patient_ids {
            let &pi = index
                .get(id.as_str())
                .ok_or_else(|| PhdError::invalid(format!("unknown patient id {id}")))?;
            let p = &cohort.patients[pi];
            for ei in 0..p.exams.len() {
                if !p.exams[ei].available {
                    continue;
                }
                seqs.push(build_history_sequence(p, ei, cohort.history_len, n_available)?);
                labels.push(p.labels_at(ei, cohort.horizons)?);
                refs.push(SampleRef {
                    patient: pi,
                    exam: ei,
                });
            }
        }
        Ok(Self {
            batch: SequenceBatch::from_sequences(&seqs, cohort.dim)?,
            labels,
            refs,
            n_available,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn horizons(&self) -> usize {
        self.labels.first().map(|l| l.horizons()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ExamRecord;

    fn patient(years: &[i32]) -> PatientRecord {
        let exams = years
            .iter()
            .map(|&y| ExamRecord::with_embedding(y, vec![y as f32, 1.0]))
            .collect();
        PatientRecord::new("p", exams, None, 6, 5).unwrap()
    }

    #[test]
    fn no_history_means_all_absent() {
        let p = patient(&[-4, -3, -2, -1, 0]);
        let s = build_history_sequence(&p, 4, 4, 0).unwrap();
        assert!(s.priors.iter().all(Option::is_none));
        assert_eq!(s.sources, vec![SlotSource::Absent; 4]);
    }

    #[test]
    fn full_history_all_true() {
        let p = patient(&[-4, -3, -2, -1, 0]);
        let s = build_history_sequence(&p, 4, 4, 4).unwrap();
        assert_eq!(s.n_true(), 4);
        for (i, prior) in s.priors.iter().enumerate() {
            let prior = prior.as_ref().unwrap();
            assert_eq!(prior.relative_year, -(i as i32 + 1));
            assert_eq!(prior.vector[0], -(i as f32 + 1.0));
        }
    }

    #[test]
    fn cannot_exceed_what_exists() {
        let p = patient(&[-2, -1, 0]);
        let s = build_history_sequence(&p, 2, 4, 4).unwrap();
        assert_eq!(
            s.sources,
            vec![SlotSource::True, SlotSource::True, SlotSource::Absent, SlotSource::Absent]
        );
    }

    #[test]
    fn keeps_most_recent_priors_and_respects_gaps() {
        let p = patient(&[-5, -3, -2, 0]);
        let s = build_history_sequence(&p, 3, 4, 1).unwrap();
        assert_eq!(s.n_true(), 1);
        assert_eq!(s.sources[1], SlotSource::True);
        let s = build_history_sequence(&p, 3, 4, 4).unwrap();
        // year -5 is outside the 4-year window
        assert_eq!(
            s.sources,
            vec![SlotSource::Absent, SlotSource::True, SlotSource::True, SlotSource::Absent]
        );
    }

    #[test]
    fn never_leaks_later_exams() {
        let p = patient(&[-3, -2, -1, 0]);
        let s = build_history_sequence(&p, 1, 4, 4).unwrap();
        assert_eq!(s.current.vector[0], -2.0);
        for prior in s.priors.iter().flatten() {
            assert!(prior.relative_year < 0);
            assert!(prior.vector[0] < -2.0);
        }
    }

    #[test]
    fn errors() {
        let p = patient(&[-1, 0]);
        assert!(build_history_sequence(&p, 2, 4, 1).is_err());
        assert!(build_history_sequence(&p, 1, 4, 5).is_err());
    }
}
