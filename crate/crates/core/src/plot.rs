//! Minimal static SVG line charts for the figure analogs. Output depends only
//! on the data, so reruns produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    Linear,
    LogLog,
}

fn extent(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    if lo == hi {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], axes: Axes) -> Result<String> {
    let tf = |v: f64| if axes == Axes::LogLog { v.log10() } else { v };
    let keep = |v: f64| axes == Axes::Linear || v > 0.0;
    let xs = series.iter().flat_map(|s| s.x.iter().copied()).filter(|v| keep(*v)).map(tf);
    let ys = series.iter().flat_map(|s| s.y.iter().copied()).filter(|v| keep(*v)).map(tf);
    let ((x0, x1), (y0, y1)) = match (extent(xs), extent(ys)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::InvalidParameter("nothing to plot".into())),
    };
    let px = |v: f64| MARGIN + (tf(v) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (tf(v) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let sx = l + (r - l) * i as f64 / 4.0;
        let sy = b - (b - t) * i as f64 / 4.0;
        let lab = |v: f64| if axes == Axes::LogLog { format!("1e{v:.1}") } else { format!("{v:.3}") };
        let _ = writeln!(svg, r#"<text x="{sx}" y="{}" text-anchor="middle">{}</text>"#, b + 16.0, lab(fx));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, sy + 4.0, lab(fy));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 18.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .filter(|(x, y)| keep(**x) && keep(**y))
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let ly = t + 16.0 + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}"{dash}/>"#, r - 150.0, ly - 4.0, r - 125.0, ly - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, r - 120.0, escape(s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_line_chart(
    path: impl AsRef<Path>,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    axes: Axes,
) -> Result<()> {
    std::fs::write(path, line_chart(title, x_label, y_label, series, axes)?)?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
