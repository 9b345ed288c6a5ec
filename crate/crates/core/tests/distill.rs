//! Student and teacher training behaviour on a tiny cohort.

mod common;

use common::fixtures::{quick_train, world};
use phd_core::distill::{
    check_coefficients, total_loss, train_history_model, train_student, train_teachers, tune_lambda, Parameterized,
    TrainConfig,
};
use phd_core::embedding::SampleTable;
use phd_core::PhdError;
use rand::Rng;

#[test]
fn training_is_deterministic() {
    let w = world(10);
    let cfg = quick_train();
    let (a, ra) = train_student("baseline", &w.spec, &w.train, &w.val, &no_kd(&cfg), None).unwrap();
    let (b, rb) = train_student("baseline", &w.spec, &w.train, &w.val, &no_kd(&cfg), None).unwrap();
    assert_eq!(a.store.checksum(), b.store.checksum());
    assert_eq!(ra.best_metric, rb.best_metric);
    let (t1, _) = train_history_model("multitask", &w.spec, &w.train, &w.val, &cfg, None, None).unwrap();
    let (t2, _) = train_history_model("multitask", &w.spec, &w.train, &w.val, &cfg, None, None).unwrap();
    assert_eq!(t1.store().checksum(), t2.store().checksum());
}

fn no_kd(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        lambda_logit: 0.0,
        lambda_feature: 0.0,
        ..cfg.clone()
    }
}

#[test]
fn zero_weights_reduce_to_plain_rce() {
    let mut rng = common::rng(0);
    for _ in 0..100 {
        let r = rng.random_range(0.0..5.0);
        let a = rng.random_range(0.0..5.0);
        let b = rng.random_range(0.0..5.0);
        assert_eq!(total_loss(r, a, b, 0.0, 0.0).unwrap(), r);
    }
    // With both weights at zero the teachers have no influence at all.
    let w = world(11);
    let cfg = no_kd(&quick_train());
    let (bundle, _) = train_teachers(&w.spec, &w.train, &w.val, &quick_train(), None).unwrap();
    let (with, _) = train_student("s", &w.spec, &w.train, &w.val, &cfg, Some(&bundle)).unwrap();
    let (without, _) = train_student("s", &w.spec, &w.train, &w.val, &cfg, None).unwrap();
    assert_eq!(with.store.checksum(), without.store.checksum());
}

#[test]
fn logit_kd_needs_teachers() {
    let w = world(12);
    let err = train_student("phd", &w.spec, &w.train, &w.val, &quick_train(), None).unwrap_err();
    assert!(matches!(err, PhdError::Dependency(_)), "{err}");
    assert!(check_coefficients(-0.1, 1.0).is_err());
    assert!(check_coefficients(1.0, f64::NAN).is_err());
}

#[test]
fn student_never_reads_priors() {
    let w = world(13);
    let (student, _) = train_student("baseline", &w.spec, &w.train, &w.val, &no_kd(&quick_train()), None).unwrap();
    let clean = student.predict_batch(&w.test.batch).unwrap();
    let mut poisoned = w.test.batch.clone();
    let mut rng = common::rng(1);
    for slot in &mut poisoned.priors {
        slot.mapv_inplace(|_| rng.random_range(-1e3..1e3));
    }
    for a in &mut poisoned.available {
        a.iter_mut().for_each(|v| *v = rng.random());
    }
    let p = student.predict_batch(&poisoned).unwrap();
    assert_eq!(clean, p);
    assert_eq!(clean, student.predict(&w.test.batch.current).unwrap());
    // The same exams seen with any number of available priors score alike.
    for h in 0..=w.cohort.history_len {
        let t = SampleTable::build(&w.cohort, &w.split.test_ids, h).unwrap();
        assert_eq!(student.predict_batch(&t.batch).unwrap(), clean);
    }
}

#[test]
fn teachers_do_read_priors() {
    let w = world(14);
    let (bundle, _) = train_teachers(&w.spec, &w.train, &w.val, &quick_train(), None).unwrap();
    let full = bundle.probs(&w.test.batch).unwrap();
    let none = bundle.probs(&w.test.batch.without_priors()).unwrap();
    assert_ne!(full, none);
    // Column k of the bundle is expert k's own column k.
    for (k, m) in bundle.members().iter().enumerate() {
        let own = m.get().predict(&w.test.batch).unwrap();
        assert_eq!(own.column(k), full.column(k));
    }
}

#[test]
fn lambda_search_keeps_the_best_validation_score() {
    let w = world(15);
    let cfg = quick_train();
    let (bundle, _) = train_teachers(&w.spec, &w.train, &w.val, &cfg, None).unwrap();
    let grid = [2.0, 0.5];
    let search = tune_lambda("phd", &w.spec, &w.train, &w.val, &cfg, &bundle, &grid).unwrap();
    assert_eq!(search.scores.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0.5, 2.0]);
    let best = search.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(search.report.best_metric, best);
    let first_best = search.scores.iter().find(|s| s.1 == best).unwrap().0;
    assert_eq!(search.best_lambda, first_best);
    assert!(tune_lambda("phd", &w.spec, &w.train, &w.val, &cfg, &bundle, &[]).is_err());
}

#[test]
fn expert_warm_start_never_loses_validation_auc() {
    let w = world(16);
    let cfg = quick_train();
    let (multi, _) = train_history_model("multitask", &w.spec, &w.train, &w.val, &cfg, None, None).unwrap();
    let (_, reports) = train_teachers(&w.spec, &w.train, &w.val, &cfg, Some(&multi)).unwrap();
    let probs = multi.predict(&w.val.batch).unwrap();
    for (k, r) in reports.iter().enumerate() {
        let (s, y) = phd_core::eval::horizon_column(&probs, &w.val.labels, k);
        if let Ok(base) = phd_core::eval::auc(&s, &y) {
            assert!(r.best_metric >= base, "horizon {}: {} < {base}", k + 1, r.best_metric);
        }
    }
}
