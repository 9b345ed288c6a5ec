//! Cohort files: a JSON Lines manifest plus a little-endian `f32` sidecar.
//!
//! The manifest's first line is a header object; every following line is
//! one patient. Embeddings live in the sidecar, which starts with a 16-byte
//! header (`b"PHDC"`, version `u32`, dim `u32`, count `u32`) followed by
//! `count * dim` floats. Patients reference sidecar rows by index.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cohort::{Cohort, ExamRecord, PatientRecord};
use super::labels::LabelVector;
use crate::error::{PhdError, Result};

pub const COHORT_FORMAT: &str = "phd-cohort";
pub const COHORT_VERSION: u32 = 1;
pub const SIDECAR_MAGIC: &[u8; 4] = b"PHDC";
const SIDECAR_HEADER: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    format: String,
    version: u32,
    dim: usize,
    horizons: usize,
    history_len: usize,
    n_patients: usize,
    n_embeddings: usize,
    sidecar: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    id: String,
    exam_years: Vec<i32>,
    available: Vec<bool>,
    diagnosis_year: Option<i32>,
    censor_year: i32,
    labels: LabelVector,
    embedding_offsets: Vec<usize>,
}

/// Sidecar path for a manifest: same stem, `.bin` extension.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_cohort(cohort: &Cohort, manifest: &Path) -> Result<()> {
    cohort.validate()?;
    if let Some(parent) = manifest.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| PhdError::io(parent, e))?;
        }
    }
    let sidecar = sidecar_path(manifest);
    let n_embeddings = cohort.n_exams();

    let mut bin = Vec::with_capacity(SIDECAR_HEADER + 4 * n_embeddings * cohort.dim);
    bin.extend_from_slice(SIDECAR_MAGIC);
    bin.extend_from_slice(&COHORT_VERSION.to_le_bytes());
    bin.extend_from_slice(&(cohort.dim as u32).to_le_bytes());
    bin.extend_from_slice(&(n_embeddings as u32).to_le_bytes());

    let file = fs::File::create(manifest).map_err(|e| PhdError::io(manifest, e))?;
    let mut out = BufWriter::new(file);
    let header = ManifestHeader {
        format: COHORT_FORMAT.into(),
        version: COHORT_VERSION,
        dim: cohort.dim,
        horizons: cohort.horizons,
        history_len: cohort.history_len,
        n_patients: cohort.len(),
        n_embeddings,
        sidecar: sidecar
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let write_line = |out: &mut BufWriter<fs::File>, text: String| {
        writeln!(out, "{text}").map_err(|e| PhdError::io(manifest, e))
    };
    write_line(&mut out, serde_json::to_string(&header)?)?;

    let mut offset = 0usize;
    for p in &cohort.patients {
        let mut offsets = Vec::with_capacity(p.exams.len());
        for e in &p.exams {
            for v in &e.embedding {
                bin.extend_from_slice(&v.to_le_bytes());
            }
            offsets.push(offset);
            offset += 1;
        }
        let line = PatientLine {
            id: p.patient_id.clone(),
            exam_years: p.exams.iter().map(|e| e.relative_year).collect(),
            available: p.exams.iter().map(|e| e.available).collect(),
            diagnosis_year: p.diagnosis_year,
            censor_year: p.censor_year,
            labels: p.labels.clone(),
            embedding_offsets: offsets,
        };
        write_line(&mut out, serde_json::to_string(&line)?)?;
    }
    out.flush().map_err(|e| PhdError::io(manifest, e))?;
    fs::write(&sidecar, bin).map_err(|e| PhdError::io(&sidecar, e))
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> PhdError {
    PhdError::Parse {
        source_name: path.display().to_string(),
        location,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads and validates a sidecar, returning `(dim, rows)`.
fn load_sidecar(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| PhdError::io(path, e))?;
    if bytes.len() < SIDECAR_HEADER {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len()),
            format!("truncated header ({} of {SIDECAR_HEADER} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != SIDECAR_MAGIC {
        return Err(parse_err(path, "byte 0".into(), "bad magic, expected PHDC"));
    }
    let version = read_u32(&bytes, 4);
    if version != COHORT_VERSION {
        return Err(PhdError::UnsupportedVersion {
            found: version,
            expected: COHORT_VERSION,
        });
    }
    let dim = read_u32(&bytes, 8) as usize;
    let count = read_u32(&bytes, 12) as usize;
    let expected = SIDECAR_HEADER + 4 * dim * count;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {count} x {dim} floats, found {}", bytes.len()),
        ));
    }
    let rows = (0..count)
        .map(|r| {
            let base = SIDECAR_HEADER + 4 * dim * r;
            (0..dim)
                .map(|c| {
                    let at = base + 4 * c;
                    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
                })
                .collect()
        })
        .collect();
    Ok((dim, rows))
}

pub fn load_cohort(manifest: &Path) -> Result<Cohort> {
    let file = fs::File::open(manifest).map_err(|e| PhdError::io(manifest, e))?;
    let mut lines = BufReader::new(file).lines();

    let first = lines
        .next()
        .ok_or_else(|| parse_err(manifest, "line 1".into(), "empty manifest"))?
        .map_err(|e| PhdError::io(manifest, e))?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| {
        parse_err(manifest, format!("line 1 column {}", e.column()), e.to_string())
    })?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != COHORT_VERSION as u64 {
            return Err(PhdError::UnsupportedVersion {
                found: v as u32,
                expected: COHORT_VERSION,
            });
        }
    }
    let header: ManifestHeader = serde_json::from_value(raw)
        .map_err(|e| parse_err(manifest, "line 1".into(), e.to_string()))?;
    if header.format != COHORT_FORMAT {
        return Err(parse_err(
            manifest,
            "line 1".into(),
            format!("unknown format `{}`", header.format),
        ));
    }

    let sidecar = manifest.with_file_name(&header.sidecar);
    let (dim, rows) = load_sidecar(&sidecar)?;
    if dim != header.dim || rows.len() != header.n_embeddings {
        return Err(parse_err(
            &sidecar,
            "byte 8".into(),
            format!(
                "sidecar holds {} x {dim}, manifest declares {} x {}",
                rows.len(),
                header.n_embeddings,
                header.dim
            ),
        ));
    }

    let mut patients = Vec::with_capacity(header.n_patients);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| PhdError::io(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientLine = serde_json::from_str(&line).map_err(|e| {
            parse_err(
                manifest,
                format!("line {line_no} column {}", e.column()),
                e.to_string(),
            )
        })?;
        let n = rec.exam_years.len();
        if rec.available.len() != n || rec.embedding_offsets.len() != n {
            return Err(parse_err(
                manifest,
                format!("line {line_no}"),
                "exam_years, available and embedding_offsets differ in length",
            ));
        }
        let mut exams = Vec::with_capacity(n);
        for ((&year, &available), &off) in rec
            .exam_years
            .iter()
            .zip(&rec.available)
            .zip(&rec.embedding_offsets)
        {
            let embedding = rows.get(off).cloned().ok_or_else(|| {
                parse_err(
                    manifest,
                    format!("line {line_no}"),
                    format!("embedding offset {off} beyond sidecar rows {}", rows.len()),
                )
            })?;
            exams.push(ExamRecord {
                relative_year: year,
                embedding,
                views: Vec::new(),
                available,
            });
        }
        let patient = PatientRecord {
            patient_id: rec.id,
            exams,
            diagnosis_year: rec.diagnosis_year,
            censor_year: rec.censor_year,
            labels: rec.labels,
        };
        patient
            .validate(header.horizons)
            .map_err(|e| parse_err(manifest, format!("line {line_no}"), e.to_string()))?;
        patients.push(patient);
    }
    if patients.len() != header.n_patients {
        return Err(parse_err(
            manifest,
            format!("line {}", patients.len() + 2),
            format!(
                "manifest declares {} patients, found {} (truncated?)",
                header.n_patients,
                patients.len()
            ),
        ));
    }
    let cohort = Cohort {
        dim: header.dim,
        horizons: header.horizons,
        history_len: header.history_len,
        patients,
    };
    cohort.validate()?;
    Ok(cohort)
}
