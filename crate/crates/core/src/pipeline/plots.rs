//! Small hand-written SVG charts: line plots for loss curves and fusion
//! weights, bar charts for per-family AP.

use std::fmt::Write;

use super::train::{DistillLog, PretrainLog, TemporalLog};
use crate::metrics::EvalReport;

const W: f64 = 640.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, lo: f64, hi: f64, xlabel: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#eee"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 8.0, escape(xlabel));
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Line chart with one polyline per series; x is the point index.
pub fn line_chart(title: &str, xlabel: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let (lo, hi) = range(series.iter().flat_map(|(_, v)| v.iter().copied()));
    axes(&mut s, lo, hi, xlabel);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let span = (n.max(2) - 1) as f64;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| {
                let x = LEFT + (W - RIGHT - LEFT) * i as f64 / span;
                let y = H - BOTTOM - (H - BOTTOM - TOP) * (v - lo) / (hi - lo);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 16.0 * k as f64;
        let lx = W - RIGHT + 10.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars on a fixed `[0, 1]` axis; `None` values are drawn as gaps labelled n/a.
pub fn bar_chart(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let mut s = header(title);
    axes(&mut s, 0.0, 1.0, "");
    let n = bars.len().max(1) as f64;
    let slot = (W - RIGHT - LEFT) / n;
    for (k, (name, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.15;
        let cx = x + slot * 0.35;
        match v {
            Some(v) => {
                let h = (H - BOTTOM - TOP) * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
                    H - BOTTOM - h,
                    slot * 0.7,
                    PALETTE[0]
                );
                let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#, H - BOTTOM - h - 4.0);
            }
            None => {
                let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">n/a</text>"#, H - BOTTOM - 4.0);
            }
        }
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - BOTTOM + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub fn pretrain_plot(log: &PretrainLog) -> String {
    let series: Vec<(String, Vec<f64>)> = log
        .stages
        .iter()
        .enumerate()
        .map(|(i, st)| (format!("S{} {}", i + 1, st.stage), st.step_loss.clone()))
        .collect();
    line_chart("Contrastive pretraining loss", "step within stage", &series)
}

pub fn distill_plot(log: &DistillLog) -> String {
    line_chart(
        "Distillation loss",
        "epoch",
        &[("teacher".into(), log.teacher_epoch_loss.clone()), ("student".into(), log.student_epoch_loss.clone())],
    )
}

pub fn temporal_loss_plot(log: &TemporalLog) -> String {
    line_chart("Temporal model loss", "epoch", &[("bce".into(), log.epochs.iter().map(|e| e.loss).collect())])
}

/// `γ_k` per stride and `β` per epoch.
pub fn fusion_plot(log: &TemporalLog) -> String {
    let mut series: Vec<(String, Vec<f64>)> = log
        .strides
        .iter()
        .enumerate()
        .map(|(k, s)| (format!("gamma k={s}"), log.epochs.iter().map(|e| e.gamma[k]).collect()))
        .collect();
    series.push(("beta".into(), log.epochs.iter().map(|e| e.beta).collect()));
    line_chart("Fusion weights", "epoch", &series)
}

/// Mean AP of the six families.
pub fn ap_plot(title: &str, report: &EvalReport) -> String {
    let bars: Vec<(String, Option<f64>)> =
        report.families.iter().map(|f| (format!("AP_{}", f.family), f.mean_ap)).collect();
    bar_chart(title, &bars)
}
