use std::fs;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::error::{PhdError, Result};

/// Everything the curve emitter draws, one entry per model.
#[derive(Debug, Clone, Default)]
pub struct CurveArtifacts {
    /// Horizon (1-based) the ROC curves and ladder refer to.
    pub horizon: usize,
    pub fpr_max: f64,
    pub roc: Vec<(String, Vec<(f64, f64)>)>,
    /// `(model, [(#H, mean, std)])` for the metric-versus-history plot.
    pub history: Vec<(String, Vec<(usize, f64, f64)>)>,
    /// `(model, mean, std)` bars of the ablation ladder.
    pub ladder: Vec<(String, f64, f64)>,
}

fn plot_err(e: impl std::fmt::Display) -> PhdError {
    PhdError::Plot(e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PhdError::Plot(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(plot_err)?;
    }
    w.flush().map_err(|e| PhdError::io(path, e))
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

#[derive(Serialize)]
struct RocRow<'a> {
    model: &'a str,
    fpr: f64,
    tpr: f64,
}

/// ROC curves over `[0, x_max]`; `x_max < 1` gives the low-FPR zoom.
pub fn plot_roc(path: &Path, curves: &[(String, Vec<(f64, f64)>)], x_max: f64, title: &str) -> Result<()> {
    let y_max = if x_max < 1.0 {
        curves
            .iter()
            .flat_map(|(_, pts)| pts.iter().filter(|p| p.0 <= x_max).map(|p| p.1))
            .fold(0.0f64, f64::max)
            .max(0.1)
            .min(1.0)
    } else {
        1.0
    };
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("false positive rate")
        .y_desc("true positive rate")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let clipped = clip_curve(pts, x_max);
        chart
            .draw_series(LineSeries::new(clipped, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn clip_curve(pts: &[(f64, f64)], x_max: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if out.is_empty() {
            out.push((x0, y0));
        }
        if x1 <= x_max {
            out.push((x1, y1));
        } else {
            if x0 < x_max {
                out.push((x_max, y0 + (y1 - y0) * (x_max - x0) / (x1 - x0)));
            }
            break;
        }
    }
    out
}

#[derive(Serialize)]
struct HistoryRow<'a> {
    model: &'a str,
    n_available: usize,
    mean: f64,
    std: f64,
}

pub fn plot_history(path: &Path, series: &[(String, Vec<(usize, f64, f64)>)], y_desc: &str) -> Result<()> {
    let values: Vec<f64> = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.15).max(0.01);
    let x_max = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).max().unwrap_or(1).max(1);
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("metric vs available history", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.2..(x_max as f64 + 0.2), (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("prior exams available (#H)")
        .y_desc(y_desc)
        .x_labels(x_max + 1)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line: Vec<(f64, f64)> = pts.iter().map(|&(h, m, _)| (h as f64, m)).collect();
        chart
            .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(line.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[derive(Serialize)]
struct LadderRow<'a> {
    model: &'a str,
    mean: f64,
    std: f64,
}

pub fn plot_ladder(path: &Path, bars: &[(String, f64, f64)], y_desc: &str) -> Result<()> {
    let lo = bars.iter().map(|b| b.1 - b.2).fold(f64::INFINITY, f64::min);
    let hi = bars.iter().map(|b| b.1 + b.2).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.2).max(0.01);
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = bars.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption("ablation ladder", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n as f64, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    let names: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            names.get(i).cloned().unwrap_or_default()
        })
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    let base = lo - pad;
    for (i, (_, mean, std)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = i as f64;
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x + 0.15, base), (x + 0.85, *mean)],
                color.filled(),
            )))
            .map_err(plot_err)?;
        chart
            .draw_series(std::iter::once(PathElement::new(
                vec![(x + 0.5, mean - std), (x + 0.5, mean + std)],
                BLACK.stroke_width(2),
            )))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Writes ROC curves (full range and low-FPR zoom), the metric-vs-#H plot
/// and the ablation ladder, each as SVG plus a CSV with the plotted data.
pub fn emit_curves(out_dir: &Path, art: &CurveArtifacts) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| PhdError::io(out_dir, e))?;
    let mut written = Vec::new();
    let h = art.horizon;
    if !art.roc.is_empty() {
        let rows: Vec<RocRow> = art
            .roc
            .iter()
            .flat_map(|(m, pts)| pts.iter().map(move |&(fpr, tpr)| RocRow { model: m, fpr, tpr }))
            .collect();
        let csv_path = out_dir.join(format!("roc_h{h}.csv"));
        write_csv(&csv_path, &rows)?;
        let full = out_dir.join(format!("roc_h{h}.svg"));
        plot_roc(&full, &art.roc, 1.0, &format!("ROC, {h}-year horizon"))?;
        let zoom = out_dir.join(format!("roc_h{h}_lowfpr.svg"));
        plot_roc(&zoom, &art.roc, art.fpr_max, &format!("ROC up to FPR {}, {h}-year horizon", art.fpr_max))?;
        written.extend([csv_path, full, zoom]);
    }
    if !art.history.is_empty() {
        let rows: Vec<HistoryRow> = art
            .history
            .iter()
            .flat_map(|(m, pts)| {
                pts.iter().map(move |&(n_available, mean, std)| HistoryRow {
                    model: m,
                    n_available,
                    mean,
                    std,
                })
            })
            .collect();
        let csv_path = out_dir.join(format!("pauc_vs_history_h{h}.csv"));
        write_csv(&csv_path, &rows)?;
        let svg = out_dir.join(format!("pauc_vs_history_h{h}.svg"));
        plot_history(&svg, &art.history, &format!("{h}-year pAUC"))?;
        written.extend([csv_path, svg]);
    }
    if !art.ladder.is_empty() {
        let rows: Vec<LadderRow> = art
            .ladder
            .iter()
            .map(|(m, mean, std)| LadderRow {
                model: m,
                mean: *mean,
                std: *std,
            })
            .collect();
        let csv_path = out_dir.join(format!("ablation_ladder_h{h}.csv"));
        write_csv(&csv_path, &rows)?;
        let svg = out_dir.join(format!("ablation_ladder_h{h}.svg"));
        plot_ladder(&svg, &art.ladder, &format!("{h}-year pAUC"))?;
        written.extend([csv_path, svg]);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_interpolates_at_limit() {
        let c = clip_curve(&[(0.0, 0.0), (0.2, 0.4), (1.0, 1.0)], 0.1);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].0, 0.1);
        assert!((c[1].1 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn every_plot_has_a_csv_twin() {
        let dir = tempfile::tempdir().unwrap();
        let art = CurveArtifacts {
            horizon: 5,
            fpr_max: 0.1,
            roc: vec![("a".into(), vec![(0.0, 0.0), (0.05, 0.3), (1.0, 1.0)])],
            history: vec![("a".into(), vec![(0, 0.6, 0.01), (1, 0.65, 0.02)])],
            ladder: vec![("a".into(), 0.6, 0.01), ("b".into(), 0.62, 0.02)],
        };
        let files = emit_curves(dir.path(), &art).unwrap();
        let svgs = files.iter().filter(|p| p.extension().unwrap() == "svg").count();
        let csvs = files.iter().filter(|p| p.extension().unwrap() == "csv").count();
        assert_eq!((svgs, csvs), (4, 3));
        for f in &files {
            assert!(fs::metadata(f).unwrap().len() > 0);
        }
    }
}
