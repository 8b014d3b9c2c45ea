//! Fixed-name outputs: metrics CSV and the per-frame error chart.

use std::fmt::Write;

use adaptdepth::metrics::{DepthMetrics, Scaling};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHART_FILE: &str = "chart.svg";

pub fn parse_scaling(s: &str) -> Result<Scaling, String> {
    match s {
        "median" => Ok(Scaling::Median),
        "baseline" => Ok(Scaling::Baseline),
        "none" => Ok(Scaling::None),
        _ => Err(format!("unknown scaling {s:?} (median, baseline, none)")),
    }
}

/// Per-frame rows followed by a `mean` row.
pub fn metrics_csv(per_frame: &[(usize, DepthMetrics)]) -> String {
    let mut out = format!("frame,{}\n", DepthMetrics::CSV_HEADER);
    for (i, m) in per_frame {
        let _ = writeln!(out, "{i},{}", m.csv_row());
    }
    let all: Vec<DepthMetrics> = per_frame.iter().map(|p| p.1).collect();
    if let Some(mean) = DepthMetrics::mean(&all) {
        let _ = writeln!(out, "mean,{}", mean.csv_row());
    }
    out
}

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with one polyline per series, x = sample position.
pub fn line_chart(series: &[Series], x_label: &str, y_label: &str) -> String {
    let (w, h) = (720.0, 360.0);
    let (left, right, top, bottom) = (60.0, 180.0, 20.0, 40.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let y_max = finite.fold(0.0f64, f64::max).max(1e-9) * 1.05;
    let n_max = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let x_span = (n_max.max(2) - 1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, y0, x1) = (left, top + ph, left + pw);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y0 - ph * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x0}" y="{:.2}">0</text><text x="{x1}" y="{:.2}" text-anchor="end">{}</text>"#,
        y0 + 14.0,
        y0 + 14.0,
        n_max.saturating_sub(1)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(j, v)| format!("{:.2},{:.2}", x0 + pw * j as f64 / x_span, y0 - ph * (v / y_max)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 * i as f64 + 6.0;
        let lx = x1 + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
