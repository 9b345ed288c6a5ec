//! Brute-force reference implementations, written independently of the
//! library's sort-and-sweep code.

/// Pairwise Mann-Whitney count: a positive outranking a negative scores 1,
/// a tie scores one half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// ROC operating points from every threshold `score >= t`, with `t` ranging
/// over each distinct score plus one above the maximum.
pub fn brute_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds
        .iter()
        .map(|&t| {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
            (fp / neg, tp / pos)
        })
        .collect()
}

/// Raw area under the piecewise-linear ROC for `fpr` in `[0, f]`, each
/// segment clipped to the window.
pub fn brute_raw_pauc(scores: &[f64], labels: &[bool], f: f64) -> f64 {
    let pts = brute_roc(scores, labels);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let hi = x1.min(f);
        if hi <= x0 {
            continue;
        }
        let at = |x: f64| if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
        area += (hi - x0) * (at(x0) + at(hi)) / 2.0;
    }
    area
}

/// McClish-standardised partial AUC from the brute-force raw area.
pub fn brute_mcclish(scores: &[f64], labels: &[bool], f: f64) -> f64 {
    let a = brute_raw_pauc(scores, labels, f);
    let min = f * f / 2.0;
    let max = f;
    0.5 * (1.0 + (a - min) / (max - min))
}
