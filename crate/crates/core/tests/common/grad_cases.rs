//! Parameterised objectives for finite-difference checks: each case builds
//! a fresh parameter store and a closure evaluating a scalar loss.

use phd_core::data::LabelVector;
use phd_core::distill::{logit_kd_node, total_node};
use phd_core::nn::{Graph, Mat, ParamStore, Var};
use phd_core::reconstruction::{feature_kd_node, HistoryPredictor, PredictorConfig};
use phd_core::risk::{rce_node, AggregatorConfig, AggregatorKind, RiskModel, RISK_EPS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{jitter, randn, random_labels, rng};

pub type Case = (ParamStore, Box<dyn Fn(&mut Graph, &ParamStore) -> Var>);

const K: usize = 4;

/// Pre-activations whose cumulative risk stays inside the clamp.
fn hazard_pre(rng: &mut ChaCha8Rng, rows: usize) -> Mat {
    let mut m = randn(rng, rows, K + 1) * 0.5;
    m.column_mut(0).mapv_inplace(|v| v - 2.0);
    for c in 1..=K {
        m.column_mut(c).mapv_inplace(|v| v - 3.0);
    }
    m
}

fn label_batch(rng: &mut ChaCha8Rng, rows: usize) -> Vec<LabelVector> {
    let mut labels: Vec<LabelVector> = (0..rows).map(|_| random_labels(rng, K)).collect();
    // Keep at least one row supervised.
    labels[0] = LabelVector::new(vec![0, 0, 1, 1]).unwrap();
    labels
}

fn teacher_probs(rng: &mut ChaCha8Rng, rows: usize) -> Mat {
    randn(rng, rows, K).mapv(|v| 1.0 / (1.0 + (1.5 - v).exp()))
}

pub fn rce_through_hazard_head(seed: u64) -> Case {
    let mut rng = rng(seed);
    let mut store = ParamStore::new();
    let pre = store.add("pre", hazard_pre(&mut rng, 5));
    let labels = label_batch(&mut rng, 5);
    let weights: Vec<f64> = (0..K).map(|_| rng.random_range(1.0..20.0)).collect();
    let build = move |g: &mut Graph, s: &ParamStore| {
        let p = g.param(s, pre);
        let risk = g.hazard(p, RISK_EPS);
        rce_node(g, risk, &labels, &weights).unwrap().0
    };
    (store, Box::new(build))
}

pub fn logit_kd_through_hazard_head(seed: u64) -> Case {
    let mut rng = rng(seed);
    let mut store = ParamStore::new();
    let pre = store.add("pre", hazard_pre(&mut rng, 5));
    let labels = label_batch(&mut rng, 5);
    let teacher = teacher_probs(&mut rng, 5);
    let temperature = [1.0, 2.0][rng.random_range(0..2)];
    let build = move |g: &mut Graph, s: &ParamStore| {
        let p = g.param(s, pre);
        let risk = g.hazard(p, RISK_EPS);
        logit_kd_node(g, risk, &teacher, &labels, temperature).unwrap()
    };
    (store, Box::new(build))
}

pub fn feature_kd_through_predictor(seed: u64) -> Case {
    let mut rng = rng(seed);
    let mut store = ParamStore::new();
    let (rows, dim, t_h) = (4, 3, 3);
    let config = PredictorConfig {
        hidden: 5,
        dropout: 0.0,
        shared_trunk: rng.random::<bool>(),
        residual: rng.random::<bool>(),
    };
    let predictor = HistoryPredictor::new(&mut store, dim, t_h, config, &mut rng);
    jitter(&mut store, &mut rng);
    let x0 = randn(&mut rng, rows, dim);
    let targets: Vec<Mat> = (0..t_h).map(|_| randn(&mut rng, rows, dim)).collect();
    let mut available: Vec<Vec<bool>> = (0..t_h)
        .map(|_| (0..rows).map(|_| rng.random::<bool>()).collect())
        .collect();
    available[0][0] = true;
    let build = move |g: &mut Graph, s: &ParamStore| {
        let x = g.input(x0.clone());
        let outs = predictor.forward::<ChaCha8Rng>(g, s, x, None);
        feature_kd_node(g, &outs, &targets, &available).unwrap()
    };
    (store, Box::new(build))
}

pub fn student_objective_end_to_end(seed: u64) -> Case {
    let mut rng = rng(seed);
    let mut store = ParamStore::new();
    let (rows, dim, t_h) = (3, 3, 2);
    let agg = AggregatorConfig {
        kind: if rng.random::<bool>() {
            AggregatorKind::Attention
        } else {
            AggregatorKind::Recurrent
        },
        d_model: 4,
        heads: 2,
        layers: 1,
        ffn: 4,
        ..AggregatorConfig::default()
    };
    let predictor = HistoryPredictor::new(
        &mut store,
        dim,
        t_h,
        PredictorConfig {
            hidden: 4,
            dropout: 0.0,
            ..PredictorConfig::default()
        },
        &mut rng,
    );
    let model = RiskModel::new(&mut store, dim, t_h, K, &agg, &mut rng);
    jitter(&mut store, &mut rng);
    let x0 = randn(&mut rng, rows, dim);
    let targets: Vec<Mat> = (0..t_h).map(|_| randn(&mut rng, rows, dim)).collect();
    let available = vec![vec![true; rows]; t_h];
    let labels = label_batch(&mut rng, rows);
    let teacher = teacher_probs(&mut rng, rows);
    let (ll, lf) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
    let build = move |g: &mut Graph, s: &ParamStore| {
        let x = g.input(x0.clone());
        let priors = predictor.forward::<ChaCha8Rng>(g, s, x, None);
        let mut slots = vec![x];
        slots.extend(priors.iter().copied());
        let present = vec![vec![true; rows]; t_h + 1];
        let (_, risk) = model.forward(g, s, &slots, &present, None);
        let rce = rce_node(g, risk, &labels, &[3.0; K]).unwrap().0;
        let kl = logit_kd_node(g, risk, &teacher, &labels, 1.0);
        let fk = feature_kd_node(g, &priors, &targets, &available);
        total_node(g, rce, kl, fk, ll, lf)
    };
    (store, Box::new(build))
}

pub fn hazard_head(seed: u64) -> Case {
    let mut rng = rng(seed);
    let mut store = ParamStore::new();
    let pre = store.add("pre", hazard_pre(&mut rng, 5));
    let target = randn(&mut rng, 5, K);
    let build = move |g: &mut Graph, s: &ParamStore| {
        let p = g.param(s, pre);
        let risk = g.hazard(p, RISK_EPS);
        g.sq_err(risk, target.clone(), vec![1.0; 5])
    };
    (store, Box::new(build))
}
