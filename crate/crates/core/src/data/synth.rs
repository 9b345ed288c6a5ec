//! Synthetic longitudinal cohorts with a planted temporal risk signal.
//!
//! Every patient follows a latent linear trajectory `level(t) = z + s*g*b*t`
//! where `z` is the entry level, `b` the patient's slope, `s` the configured
//! signal strength and `g` a fixed slope scale. Yearly event hazards are
//! `sigmoid(base_logit + risk_coef * level(t))`, so with `s > 0` the slope
//! drives long-horizon risk. Each visit embedding is a noisy linear read-out
//! of the current level, the slope (weakly) and a static per-patient
//! signature. A single exam therefore reveals the slope only through a noisy
//! channel, while the sequence of prior exams pins it down.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cohort::{Cohort, ExamRecord, PatientRecord};
use crate::error::{PhdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub dim: usize,
    pub history_len: usize,
    pub horizons: usize,
    /// Strength `s` in [0, 1] of the slope's effect on the latent trajectory.
    pub signal: f64,
    /// Per-coordinate standard deviation of embedding noise.
    pub noise: f64,
    pub seed: u64,
    /// Planned yearly screenings are drawn uniformly from `1..=max_exams`.
    pub max_exams: usize,
    /// Probability of attending each planned screening after the first.
    pub attend_prob: f64,
    pub slope_scale: f64,
    /// Loading of the slope on its own embedding direction.
    pub slope_visibility: f64,
    pub level_visibility: f64,
    pub signature_dim: usize,
    pub signature_scale: f64,
    pub base_logit: f64,
    pub risk_coef: f64,
    /// Follow-up after the last exam is uniform on `followup_min..=followup_max`.
    pub followup_min: i32,
    pub followup_max: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            dim: 128,
            history_len: 4,
            horizons: 5,
            signal: 1.0,
            noise: 0.3,
            seed: 0,
            max_exams: 7,
            attend_prob: 0.9,
            slope_scale: 1.0,
            slope_visibility: 0.05,
            level_visibility: 1.0,
            signature_dim: 8,
            signature_scale: 0.0,
            base_logit: -7.5,
            risk_coef: 0.6,
            followup_min: 3,
            followup_max: 9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_patients", self.n_patients),
            ("dim", self.dim),
            ("history_len", self.history_len),
            ("horizons", self.horizons),
            ("max_exams", self.max_exams),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(PhdError::Config {
                    field: field.into(),
                    message: "must be positive".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(PhdError::Config {
                field: "signal".into(),
                message: format!("must lie in [0, 1], got {}", self.signal),
            });
        }
        if !(self.noise >= 0.0) {
            return Err(PhdError::Config {
                field: "noise".into(),
                message: "must be non-negative".into(),
            });
        }
        if !(self.attend_prob > 0.0 && self.attend_prob <= 1.0) {
            return Err(PhdError::Config {
                field: "attend_prob".into(),
                message: "must lie in (0, 1]".into(),
            });
        }
        if self.followup_min < 0 || self.followup_max < self.followup_min {
            return Err(PhdError::Config {
                field: "followup_min".into(),
                message: "need 0 <= followup_min <= followup_max".into(),
            });
        }
        if self.signature_dim > self.dim.saturating_sub(2) {
            return Err(PhdError::Config {
                field: "signature_dim".into(),
                message: "needs dim >= signature_dim + 2".into(),
            });
        }
        Ok(())
    }
}

/// Latent quantities behind one generated patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientLatent {
    pub entry_level: f64,
    pub slope: f64,
    /// Calendar year (since entry) of each kept exam, aligned with `exams`.
    pub exam_times: Vec<i32>,
    /// Latent level at each kept exam.
    pub exam_levels: Vec<f64>,
    /// Calendar year of the event, when it happens within the simulated window.
    pub event_time: Option<i32>,
}

/// Fixed read-out directions shared by the whole cohort.
struct Readout {
    level: Array1<f64>,
    slope: Array1<f64>,
    signature: Array2<f64>,
}

impl Readout {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        // Gram-Schmidt over random Gaussian vectors gives orthonormal directions.
        let n_dirs = 2 + cfg.signature_dim;
        let mut dirs: Vec<Array1<f64>> = Vec::with_capacity(n_dirs);
        while dirs.len() < n_dirs {
            let mut v: Array1<f64> =
                Array1::from_shape_fn(cfg.dim, |_| StandardNormal.sample(rng));
            for d in &dirs {
                let proj = v.dot(d);
                v.scaled_add(-proj, d);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                dirs.push(v / norm);
            }
        }
        let mut signature = Array2::zeros((cfg.signature_dim, cfg.dim));
        for (i, d) in dirs[2..].iter().enumerate() {
            signature.row_mut(i).assign(d);
        }
        Self {
            level: dirs[0].clone(),
            slope: dirs[1].clone(),
            signature,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_synthetic_cohort(cfg: &SynthConfig) -> Result<Cohort> {
    generate_with_latents(cfg).map(|(c, _)| c)
}

/// Generates the cohort together with each patient's latent trajectory.
pub fn generate_with_latents(cfg: &SynthConfig) -> Result<(Cohort, Vec<PatientLatent>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let readout = Readout::new(cfg, &mut rng);
    let drift = cfg.signal * cfg.slope_scale;
    let width = format!("{}", cfg.n_patients.saturating_sub(1)).len();

    let mut patients = Vec::with_capacity(cfg.n_patients);
    let mut latents = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let z: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let signature: Array1<f64> =
            Array1::from_shape_fn(cfg.signature_dim, |_| rng.sample::<f64, _>(StandardNormal));
        let level = |t: i32| z + drift * b * t as f64;

        let planned = rng.random_range(1..=cfg.max_exams) as i32;
        let mut times: Vec<i32> = vec![0];
        for t in 1..planned {
            if rng.random::<f64>() < cfg.attend_prob {
                times.push(t);
            }
        }
        let followup = rng.random_range(cfg.followup_min..=cfg.followup_max);
        let horizon_end = planned - 1 + followup;
        let mut event_time = None;
        for t in 1..=horizon_end {
            let h = sigmoid(cfg.base_logit + cfg.risk_coef * level(t));
            if rng.random::<f64>() < h {
                event_time = Some(t);
                break;
            }
        }
        // Screening stops at diagnosis.
        if let Some(d) = event_time {
            times.retain(|&t| t < d);
        }
        let last = *times.last().expect("entry exam is always kept");
        let censor_year = followup + (planned - 1 - last);
        let diagnosis_year = event_time.map(|d| d - last).filter(|&d| d <= censor_year);

        let mut exams = Vec::with_capacity(times.len());
        let mut exam_levels = Vec::with_capacity(times.len());
        for &t in &times {
            let lv = level(t);
            let mut x = &readout.level * (cfg.level_visibility * lv)
                + &readout.slope * (cfg.slope_visibility * b)
                + readout.signature.t().dot(&signature) * cfg.signature_scale;
            x.mapv_inplace(|v| v + cfg.noise * rng.sample::<f64, _>(StandardNormal));
            exams.push(ExamRecord::with_embedding(
                t - last,
                x.iter().map(|&v| v as f32).collect(),
            ));
            exam_levels.push(lv);
        }
        let id = format!("SYN{i:0width$}");
        patients.push(PatientRecord::new(id, exams, diagnosis_year, censor_year, cfg.horizons)?);
        latents.push(PatientLatent {
            entry_level: z,
            slope: b,
            exam_times: times,
            exam_levels,
            event_time,
        });
    }
    let cohort = Cohort {
        dim: cfg.dim,
        horizons: cfg.horizons,
        history_len: cfg.history_len,
        patients,
    };
    Ok((cohort, latents))
}
