//! Cohort data model, labels, splits, synthetic generation and file I/O.

pub mod cohort;
pub mod io;
pub mod labels;
pub mod split;
pub mod synth;

pub use cohort::{Cohort, CohortSummary, ExamRecord, PatientRecord};
pub use io::{load_cohort, save_cohort, sidecar_path};
pub use labels::{derive_labels, LabelVector, MASKED};
pub use split::{patient_level_split, CohortSplit};
pub use synth::{generate_synthetic_cohort, generate_with_latents, PatientLatent, SynthConfig};
