//! Identities of the distillation losses and shape guarantees of the hazard
//! head, over many random draws.

mod common;

use phd_core::distill::{logit_kd_loss, ModelSpec, StudentModel};
use phd_core::reconstruction::{feature_kd_loss, PredictorConfig};
use phd_core::risk::{cumulative_risk, hazard_head, AggregatorConfig, AggregatorKind, RISK_EPS};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn logit_kd_hand_value() {
    // KL(Bern(0.5) || Bern(0.75)).
    let v = logit_kd_loss(&[0.0], &[3f64.ln()], &[true]).unwrap();
    assert!((v - 0.143841).abs() < 1e-6, "{v}");
}

#[test]
fn losses_vanish_on_identical_inputs_and_are_never_negative() {
    let mut rng = common::rng(3);
    for _ in 0..10_000 {
        let k = rng.random_range(1..8);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let z2: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let mut mask: Vec<bool> = (0..k).map(|_| rng.random()).collect();
        mask[0] = true;
        assert_eq!(logit_kd_loss(&z, &z, &mask).unwrap(), 0.0);
        assert!(logit_kd_loss(&z, &z2, &mask).unwrap() >= 0.0);

        let t_h = rng.random_range(1..5);
        let d = rng.random_range(1..6);
        let x: Vec<Vec<f64>> = (0..t_h).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..t_h).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let avail: Vec<bool> = (0..t_h).map(|_| rng.random()).collect();
        assert_eq!(feature_kd_loss(&x, &x, &avail).unwrap().loss, 0.0);
        assert!(feature_kd_loss(&x, &y, &avail).unwrap().loss >= 0.0);
    }
}

#[test]
fn hazard_head_is_monotone_over_random_preactivations() {
    let mut rng = common::rng(4);
    for _ in 0..10_000 {
        let k = rng.random_range(1..9);
        let scale = [0.1, 1.0, 5.0, 30.0][rng.random_range(0..4)];
        let pre: Vec<f64> = (0..=k).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let out = hazard_head(&pre, RISK_EPS).unwrap();
        assert_eq!(out.cum_risk.len(), k);
        assert!(out.cum_risk.windows(2).all(|w| w[0] <= w[1]), "{:?}", out.cum_risk);
        assert!(out.cum_risk.iter().all(|&p| (RISK_EPS..=1.0 - RISK_EPS).contains(&p)));
        assert!(out.increments.iter().all(|&h| h >= 0.0));
    }
}

#[test]
fn zero_increments_give_constant_risk() {
    for b in [1e-3, 0.05, 0.3, 0.9] {
        assert_eq!(cumulative_risk(b, &[0.0; 5], RISK_EPS), vec![b; 5]);
    }
    // Very negative increment pre-activations underflow softplus to zero.
    let out = hazard_head(&[-1.0, -800.0, -800.0, -800.0], RISK_EPS).unwrap();
    assert_eq!(out.cum_risk, vec![out.baseline; 3]);
}

#[test]
fn whole_network_outputs_are_monotone() {
    let mut rng = common::rng(5);
    for draw in 0..200 {
        let spec = ModelSpec {
            dim: 6,
            history_len: 3,
            horizons: 5,
            aggregator: AggregatorConfig {
                kind: if draw % 2 == 0 {
                    AggregatorKind::Attention
                } else {
                    AggregatorKind::Recurrent
                },
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
        let mut model = StudentModel::new(spec, draw);
        // Push the parameters well away from initialisation.
        let noise = rng.random_range(0.1..3.0);
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let (r, c) = model.store.value(id).dim();
            let m = common::randn(&mut rng, r, c) * noise;
            *model.store.value_mut(id) += &m;
        }
        let x = common::randn(&mut rng, 50, 6) * 3.0;
        let p = model.predict(&x).unwrap();
        for row in p.rows() {
            assert!(row.windows(2).into_iter().all(|w| w[0] <= w[1]), "draw {draw}: {row}");
        }
    }
}

proptest! {
    #[test]
    fn cumulative_risk_is_monotone(b in 0.0f64..1.0, inc in prop::collection::vec(0.0f64..0.5, 1..10)) {
        let p = cumulative_risk(b, &inc, RISK_EPS);
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(p.iter().all(|&v| v <= 1.0 - RISK_EPS && v >= RISK_EPS));
    }

    #[test]
    fn feature_kd_is_symmetric(
        pairs in prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3), 1..5),
        avail in prop::collection::vec(any::<bool>(), 5),
    ) {
        let x: Vec<Vec<f64>> = pairs.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
        let y: Vec<Vec<f64>> = pairs.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
        let m = &avail[..x.len()];
        prop_assert_eq!(feature_kd_loss(&x, &y, m).unwrap().loss, feature_kd_loss(&y, &x, m).unwrap().loss);
    }
}
