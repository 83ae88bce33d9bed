//! Report emission: JSON, CSV, and four SVG diagnostic plots.
//!
//! | file                   | contents                                            |
//! |------------------------|-----------------------------------------------------|
//! | `report.json`          | the full [`TrqReport`]                              |
//! | `importances.csv`      | per-dimension mean \|φ\| with segment tags           |
//! | `batches.csv`          | per-batch mean scores                               |
//! | `importance_bar.svg`   | per-dimension importance, speaker vs content colors |
//! | `heatmap.svg`          | speaker label × dimension mean \|φ\|                 |
//! | `batch_sequence.svg`   | batch scores in explanation order                   |
//! | `batch_box.svg`        | box plot of batch scores                            |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::AttributionMatrix;
use crate::filters::quantile_linear;
use crate::svg::{heat_color, SvgDoc};
use crate::trq::{per_label_importance, TrqReport};

pub const REPORT_JSON: &str = "report.json";
pub const IMPORTANCES_CSV: &str = "importances.csv";
pub const BATCHES_CSV: &str = "batches.csv";
pub const BAR_SVG: &str = "importance_bar.svg";
pub const HEATMAP_SVG: &str = "heatmap.svg";
pub const SEQUENCE_SVG: &str = "batch_sequence.svg";
pub const BOX_SVG: &str = "batch_box.svg";

const SPEAKER_COLOR: &str = "#1f77b4";
const CONTENT_COLOR: &str = "#d62728";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::InvalidConfig(format!("unknown report format {other}"))),
        }
    }
}

pub fn to_json(report: &TrqReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn read_report(path: &Path) -> Result<TrqReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the requested formats into `out_dir` and returns the files written.
///
/// The heatmap needs per-sample attributions and is skipped when `attr` is `None`.
pub fn emit_report(
    report: &TrqReport,
    attr: Option<&AttributionMatrix>,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        write_file(out_dir.join(REPORT_JSON), &to_json(report)?, &mut written)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        write_file(out_dir.join(IMPORTANCES_CSV), &importances_csv(report), &mut written)?;
        write_file(out_dir.join(BATCHES_CSV), &batches_csv(report), &mut written)?;
    }
    if formats.contains(&ReportFormat::Svg) {
        write_file(out_dir.join(BAR_SVG), &importance_bar_svg(report), &mut written)?;
        if let Some(attr) = attr {
            write_file(out_dir.join(HEATMAP_SVG), &heatmap_svg(attr), &mut written)?;
        }
        write_file(out_dir.join(SEQUENCE_SVG), &batch_sequence_svg(report), &mut written)?;
        write_file(out_dir.join(BOX_SVG), &batch_box_svg(report), &mut written)?;
    }
    Ok(written)
}

fn segment(report: &TrqReport, dim: usize) -> (&'static str, usize) {
    if dim < report.d_s {
        ("speaker", dim)
    } else {
        ("content", dim - report.d_s)
    }
}

pub fn importances_csv(report: &TrqReport) -> String {
    let mut out = String::from("dim,segment,segment_index,mean_abs\n");
    for (dim, v) in report.per_dim_mean_abs.iter().enumerate() {
        let (seg, idx) = segment(report, dim);
        let _ = writeln!(out, "{dim},{seg},{idx},{v}");
    }
    out
}

pub fn batches_csv(report: &TrqReport) -> String {
    let mut out = String::from("batch,first_sample,n_samples,mean_score\n");
    for (b, score) in report.batch_scores.iter().enumerate() {
        let first = b * report.batch_size;
        let n = report.batch_size.min(report.n_samples - first);
        let _ = writeln!(out, "{b},{first},{n},{score}");
    }
    out
}

const MARGIN: f64 = 50.0;

fn axis_frame(doc: &mut SvgDoc, title: &str, x_label: &str, y_label: &str, y_max: f64) {
    let (w, h) = (doc.width(), doc.height());
    doc.line(MARGIN, h - MARGIN, w - MARGIN / 2.0, h - MARGIN, "black");
    doc.line(MARGIN, MARGIN / 2.0, MARGIN, h - MARGIN, "black");
    doc.text(w / 2.0, 18.0, 14.0, "middle", title);
    doc.text(w / 2.0, h - 12.0, 11.0, "middle", x_label);
    doc.text(8.0, MARGIN / 2.0 - 6.0, 11.0, "start", y_label);
    doc.text(MARGIN - 4.0, MARGIN / 2.0 + 4.0, 10.0, "end", &format!("{y_max:.3}"));
    doc.text(MARGIN - 4.0, h - MARGIN, 10.0, "end", "0");
}

pub fn importance_bar_svg(report: &TrqReport) -> String {
    let mut doc = SvgDoc::new(900.0, 400.0);
    let n = report.per_dim_mean_abs.len().max(1);
    let y_max = report
        .per_dim_mean_abs
        .iter()
        .fold(0.0f64, |m, &v| m.max(v))
        .max(f64::MIN_POSITIVE);
    let plot_w = doc.width() - 1.5 * MARGIN;
    let plot_h = doc.height() - 1.5 * MARGIN;
    let bar_w = plot_w / n as f64;
    for (dim, &v) in report.per_dim_mean_abs.iter().enumerate() {
        let color = if dim < report.d_s { SPEAKER_COLOR } else { CONTENT_COLOR };
        let h = plot_h * v / y_max;
        let y = doc.height() - MARGIN - h;
        doc.rect("bar", MARGIN + dim as f64 * bar_w, y, bar_w, h, color);
    }
    axis_frame(
        &mut doc,
        &format!(
            "Feature importance: mean_score {:.4}, sum_score {:.4}",
            report.mean_score, report.sum_score
        ),
        "input dimension (speaker | content)",
        "mean |SHAP|",
        y_max,
    );
    let x = doc.width() - 200.0;
    doc.rect("legend", x, 30.0, 10.0, 10.0, SPEAKER_COLOR);
    doc.text(x + 14.0, 39.0, 10.0, "start", &format!("speaker ({})", report.d_s));
    doc.rect("legend", x, 45.0, 10.0, 10.0, CONTENT_COLOR);
    doc.text(x + 14.0, 54.0, 10.0, "start", &format!("content ({})", report.d_c));
    doc.finish()
}

pub fn heatmap_svg(attr: &AttributionMatrix) -> String {
    let grid = per_label_importance(attr);
    let (rows, cols) = grid.dim();
    let mut doc = SvgDoc::new(900.0, (rows as f64 * 14.0 + 1.5 * MARGIN).max(200.0));
    let max = grid.fold(0.0f64, |m, &v| m.max(v)).max(f64::MIN_POSITIVE);
    let cell_w = (doc.width() - 1.5 * MARGIN) / cols.max(1) as f64;
    let cell_h = 14.0;
    for r in 0..rows {
        doc.text(MARGIN - 4.0, MARGIN + r as f64 * cell_h + 10.0, 9.0, "end", &r.to_string());
        for c in 0..cols {
            doc.rect(
                "cell",
                MARGIN + c as f64 * cell_w,
                MARGIN + r as f64 * cell_h,
                cell_w,
                cell_h,
                &heat_color(grid[[r, c]] / max),
            );
        }
    }
    let boundary = MARGIN + attr.d_s as f64 * cell_w;
    doc.line(boundary, MARGIN, boundary, MARGIN + rows as f64 * cell_h, "black");
    doc.text(doc.width() / 2.0, 18.0, 14.0, "middle", "Feature importance by speaker label");
    doc.text(doc.width() / 2.0, 36.0, 10.0, "middle", "dimension (speaker | content), color = mean |SHAP|");
    doc.finish()
}

pub fn batch_sequence_svg(report: &TrqReport) -> String {
    let mut doc = SvgDoc::new(700.0, 360.0);
    let scores = &report.batch_scores;
    let y_max = scores.iter().fold(0.0f64, |m, &v| m.max(v)).max(f64::MIN_POSITIVE) * 1.1;
    let plot_w = doc.width() - 1.5 * MARGIN;
    let plot_h = doc.height() - 1.5 * MARGIN;
    let step = plot_w / scores.len().max(1) as f64;
    let points: Vec<(f64, f64)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            (
                MARGIN + (i as f64 + 0.5) * step,
                doc.height() - MARGIN - plot_h * s / y_max,
            )
        })
        .collect();
    doc.polyline(&points, CONTENT_COLOR);
    for &(x, y) in &points {
        doc.circle("point", x, y, 3.0, CONTENT_COLOR);
    }
    axis_frame(
        &mut doc,
        &format!("Batch sequence: std {:.4}, cv {:.4}", report.batch_std, report.batch_cv),
        &format!("batch (size {})", report.batch_size),
        "mean_score",
        y_max,
    );
    doc.finish()
}

pub fn batch_box_svg(report: &TrqReport) -> String {
    let mut doc = SvgDoc::new(360.0, 360.0);
    let scores = Array1::from_vec(report.batch_scores.clone());
    let y_max = scores.fold(0.0f64, |m, &v| m.max(v)).max(f64::MIN_POSITIVE) * 1.1;
    let plot_h = doc.height() - 1.5 * MARGIN;
    let y = |v: f64| doc.height() - MARGIN - plot_h * v / y_max;
    if !scores.is_empty() {
        let q = |p| quantile_linear(scores.view(), p);
        let (lo, q1, med, q3, hi) = (q(0.0), q(0.25), q(0.5), q(0.75), q(1.0));
        let cx = doc.width() / 2.0 + MARGIN / 4.0;
        let (y_lo, y_q1, y_med, y_q3, y_hi) = (y(lo), y(q1), y(med), y(q3), y(hi));
        doc.line(cx, y_hi, cx, y_q3, "black");
        doc.line(cx, y_q1, cx, y_lo, "black");
        doc.line(cx - 20.0, y_hi, cx + 20.0, y_hi, "black");
        doc.line(cx - 20.0, y_lo, cx + 20.0, y_lo, "black");
        doc.rect("box", cx - 40.0, y_q3, 80.0, (y_q1 - y_q3).max(0.5), "#9ecae1");
        doc.line(cx - 40.0, y_med, cx + 40.0, y_med, "black");
    }
    axis_frame(&mut doc, "Batch score distribution", "batches", "mean_score", y_max);
    doc.finish()
}
