//! Evaluation protocol: patient-level splits, single-exam resampling and
//! frozen teachers.

mod common;

use std::collections::HashSet;

use common::fixtures::{quick_train, world};
use phd_core::data::patient_level_split;
use phd_core::distill::{train_student, train_teachers, Parameterized, TrainConfig};
use phd_core::eval::{patient_groups, single_exam_draws, split_seed, EvalSettings};
use phd_core::nn::Mat;

#[test]
fn splits_are_disjoint_and_cover_the_cohort() {
    let w = world(0);
    let all: HashSet<&str> = w.cohort.patients.iter().map(|p| p.patient_id.as_str()).collect();
    for seed in 0..20 {
        let s = patient_level_split(&w.cohort, 0.8, 0.25, seed).unwrap();
        assert!(s.is_disjoint());
        let union: HashSet<&str> = s
            .train_ids
            .iter()
            .chain(&s.val_ids)
            .chain(&s.test_ids)
            .map(String::as_str)
            .collect();
        assert_eq!(union, all);
        assert_eq!(s, patient_level_split(&w.cohort, 0.8, 0.25, seed).unwrap());
    }
}

#[test]
fn split_sizes_follow_the_fractions() {
    let mut w = world(1);
    w.cohort.patients.truncate(100);
    let s = patient_level_split(&w.cohort, 0.8, 0.25, 7).unwrap();
    assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (60, 20, 20));
}

#[test]
fn tables_hold_only_their_partition() {
    let w = world(2);
    let test: HashSet<&str> = w.split.test_ids.iter().map(String::as_str).collect();
    for r in &w.test.refs {
        assert!(test.contains(w.cohort.patients[r.patient].patient_id.as_str()));
    }
    for r in w.train.refs.iter().chain(&w.val.refs) {
        assert!(!test.contains(w.cohort.patients[r.patient].patient_id.as_str()));
    }
}

#[test]
fn one_exam_per_patient_per_repetition() {
    let w = world(3);
    let groups = patient_groups(&w.test.refs);
    assert_eq!(groups.len(), w.split.test_ids.len());
    let reps = EvalSettings::default().repetitions;
    assert_eq!(reps, 100);
    let draws = single_exam_draws(&groups, reps, 11);
    assert_eq!(draws.len(), 100);
    for rows in &draws {
        assert_eq!(rows.len(), groups.len());
        let patients: HashSet<usize> = rows.iter().map(|&r| w.test.refs[r].patient).collect();
        assert_eq!(patients.len(), groups.len());
    }
    assert_eq!(draws, single_exam_draws(&groups, reps, 11));
    assert_ne!(draws, single_exam_draws(&groups, reps, 12));
    // Patients with several exams are not always scored on the same one.
    let multi = groups.iter().position(|g| g.len() > 1).expect("some patient has priors");
    let picked: HashSet<usize> = draws.iter().map(|d| d[multi]).collect();
    assert!(picked.len() > 1);
}

#[test]
fn sampled_metrics_are_deterministic_per_seed() {
    let w = world(4);
    let probs = Mat::from_shape_fn((w.test.len(), w.test.horizons()), |(r, k)| {
        ((r * 31 + k * 7) % 17) as f64 / 17.0
    });
    let settings = EvalSettings::default();
    let a = settings.evaluate(&probs, &w.test, 5).unwrap();
    assert_eq!(a.raw.len(), 100);
    assert_eq!(a, settings.evaluate(&probs, &w.test, 5).unwrap());
    assert_ne!(a.raw, settings.evaluate(&probs, &w.test, 6).unwrap().raw);
}

#[test]
fn split_seeds_are_distinct() {
    let seeds: HashSet<u64> = (0..50).map(|i| split_seed(42, i)).collect();
    assert_eq!(seeds.len(), 50);
}

#[test]
fn student_training_leaves_teachers_untouched() {
    let w = world(5);
    let cfg = quick_train();
    let (bundle, _) = train_teachers(&w.spec, &w.train, &w.val, &cfg, None).unwrap();
    let before: Vec<String> = bundle.members().iter().map(|m| m.get().store().checksum()).collect();
    assert_eq!(before, bundle.checksums());
    let student_cfg = TrainConfig {
        lambda_logit: 2.0,
        ..cfg
    };
    train_student("phd", &w.spec, &w.train, &w.val, &student_cfg, Some(&bundle)).unwrap();
    let after: Vec<String> = bundle.members().iter().map(|m| m.get().store().checksum()).collect();
    assert_eq!(before, after);
    bundle.verify().unwrap();
}
