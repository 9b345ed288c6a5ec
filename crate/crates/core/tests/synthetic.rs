//! Statistical properties of the synthetic cohort generator, checked with
//! logistic oracles fitted on the latent trajectories.

use phd_core::data::{generate_synthetic_cohort, generate_with_latents, Cohort, PatientLatent, SynthConfig};
use phd_core::eval::auc;

fn config(signal: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients: 20000,
        dim: 16,
        signal,
        seed,
        ..SynthConfig::default()
    }
}

/// Newton-Raphson (IRLS) logistic regression with a tiny ridge so that
/// constant or collinear columns stay solvable.
fn fit_logistic(x: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..50 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (row, &label) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            let r = if label { 1.0 } else { 0.0 } - mu;
            for i in 0..p {
                grad[i] += row[i] * r;
                for j in 0..p {
                    hess[i][j] += w * row[i] * row[j];
                }
            }
        }
        for (i, h) in hess.iter_mut().enumerate() {
            h[i] += 1e-6;
            grad[i] -= 1e-6 * beta[i];
        }
        let step = solve(hess, grad);
        let size: f64 = step.iter().map(|s| s.abs()).sum();
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-10 {
            break;
        }
    }
    beta
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Latent features at each patient's last exam and the 5-year label, for
/// patients whose 5-year outcome is known. The history view adds the level
/// change over the prior window. Whether a prior exists is left out on
/// purpose: screening stops at diagnosis, so it leaks survivorship.
fn oracle_data(cohort: &Cohort, latents: &[PatientLatent]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>) {
    let k = cohort.horizons - 1;
    let (mut cur, mut hist, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (p, l) in cohort.patients.iter().zip(latents) {
        if !p.labels.is_known(k) {
            continue;
        }
        let last = l.exam_levels.len() - 1;
        let t_last = l.exam_times[last];
        let level = l.exam_levels[last];
        let prior = (0..last).find(|&i| t_last - l.exam_times[i] <= cohort.history_len as i32);
        let slope = prior.map_or(0.0, |i| (level - l.exam_levels[i]) / (t_last - l.exam_times[i]) as f64);
        cur.push(vec![1.0, level]);
        hist.push(vec![1.0, level, slope]);
        y.push(p.labels.get(k) == 1);
    }
    (cur, hist, y)
}

/// Held-out AUC of the current-only and history oracles: fit on the first
/// half, score the second.
fn oracle_aucs(cfg: &SynthConfig) -> (f64, f64) {
    let (cohort, latents) = generate_with_latents(cfg).unwrap();
    let (cur, hist, y) = oracle_data(&cohort, &latents);
    let half = y.len() / 2;
    let score = |x: &[Vec<f64>]| {
        let beta = fit_logistic(&x[..half], &y[..half]);
        let s: Vec<f64> = x[half..]
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect();
        auc(&s, &y[half..]).unwrap()
    };
    (score(&cur), score(&hist))
}

#[test]
fn regeneration_is_bit_identical() {
    let cfg = SynthConfig {
        n_patients: 200,
        ..config(1.0, 9)
    };
    let a = generate_synthetic_cohort(&cfg).unwrap();
    let b = generate_synthetic_cohort(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic_cohort(&SynthConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn five_year_prevalence_in_band() {
    for seed in 0..3 {
        let cohort = generate_synthetic_cohort(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(cohort.len() >= 2000);
        let prev = cohort.summary().prevalence[4];
        assert!((0.05..=0.15).contains(&prev), "seed {seed}: y5 prevalence {prev}");
    }
}

#[test]
fn history_is_uninformative_without_signal() {
    for seed in 0..3 {
        let (current, history) = oracle_aucs(&config(0.0, seed));
        assert!(
            (history - current).abs() < 0.01,
            "seed {seed}: current {current:.4} vs history {history:.4}"
        );
    }
}

#[test]
fn history_is_informative_with_signal() {
    for seed in 0..3 {
        let (current, history) = oracle_aucs(&config(1.0, seed));
        assert!(
            history > current + 0.005,
            "seed {seed}: current {current:.4} vs history {history:.4}"
        );
    }
}

#[test]
fn generated_labels_are_valid() {
    let cohort = generate_synthetic_cohort(&SynthConfig {
        n_patients: 500,
        ..config(1.0, 3)
    })
    .unwrap();
    cohort.validate().unwrap();
    for p in &cohort.patients {
        assert!(p.labels.is_monotone() && p.labels.has_censoring_suffix());
        assert_eq!(p.exams.last().unwrap().relative_year, 0);
        for (e, _) in p.exams.iter().enumerate() {
            let l = p.labels_at(e, cohort.horizons).unwrap();
            assert!(l.is_monotone() && l.has_censoring_suffix());
        }
    }
}

#[test]
fn rejects_bad_dimensions() {
    for cfg in [
        SynthConfig { dim: 0, ..SynthConfig::default() },
        SynthConfig { horizons: 0, ..SynthConfig::default() },
        SynthConfig { n_patients: 0, ..SynthConfig::default() },
    ] {
        assert!(generate_synthetic_cohort(&cfg).is_err());
    }
}
