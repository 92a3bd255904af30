//! Minimal deterministic SVG line charts for experiment reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Symmetric error bars, one per point.
    pub err: Option<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            err: None,
        }
    }

    pub fn with_errors(mut self, err: Vec<f64>) -> Self {
        self.err = Some(err);
        self
    }

    fn check(&self, log_x: bool) -> std::result::Result<(), String> {
        if self.x.is_empty() || self.x.len() != self.y.len() {
            return Err(format!(
                "{} ({} x vs {} y values)",
                self.name,
                self.x.len(),
                self.y.len()
            ));
        }
        if let Some(e) = &self.err {
            if e.len() != self.x.len() || e.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(format!("{} (error bars)", self.name));
            }
        }
        let bad_x = |v: &f64| !v.is_finite() || (log_x && *v <= 0.0);
        if self.x.iter().any(bad_x) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(self.name.clone());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChartMeta {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    /// Horizontal reference lines as `(label, y)`.
    pub reference_lines: Vec<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Fixed-precision number for SVG attributes.
fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

/// Render the chart to an SVG string. Equal input gives equal output.
pub fn render_line_chart(series: &[Series], meta: &ChartMeta) -> Result<String> {
    if series.is_empty() {
        return Err(Error::invalid("chart needs at least one series"));
    }
    let bad: Vec<String> = series.iter().filter_map(|s| s.check(meta.log_x).err()).collect();
    if !bad.is_empty() {
        return Err(Error::invalid(format!(
            "non-finite or malformed series: {}",
            bad.join(", ")
        )));
    }

    let tx = |x: f64| if meta.log_x { x.log10() } else { x };
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, (&x, &y)) in s.x.iter().zip(&s.y).enumerate() {
            let e = s.err.as_ref().map_or(0.0, |e| e[i]);
            x_min = x_min.min(tx(x));
            x_max = x_max.max(tx(x));
            y_min = y_min.min(y - e);
            y_max = y_max.max(y + e);
        }
    }
    for (_, y) in &meta.reference_lines {
        if y.is_finite() {
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
    }
    if x_max - x_min <= 0.0 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min <= 0.0 {
        let pad = 0.5 * y_max.abs().max(1.0);
        y_min -= pad;
        y_max += pad;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (tx(x) - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        num(MARGIN_LEFT + plot_w / 2.0),
        escape(&meta.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        num(MARGIN_LEFT),
        num(MARGIN_TOP),
        num(plot_w),
        num(plot_h)
    );

    // ticks
    let x_ticks: Vec<f64> = if meta.log_x {
        (x_min.ceil() as i32..=x_max.floor() as i32)
            .map(|k| 10f64.powi(k))
            .collect()
    } else {
        (0..=4).map(|k| x_min + (x_max - x_min) * k as f64 / 4.0).collect()
    };
    for x in x_ticks {
        let p = px(x);
        let _ = writeln!(
            svg,
            r#"<line class="tick" x1="{p}" y1="{b}" x2="{p}" y2="{b5}" stroke="black"/><text x="{p}" y="{bt}" text-anchor="middle">{l}</text>"#,
            p = num(p),
            b = num(MARGIN_TOP + plot_h),
            b5 = num(MARGIN_TOP + plot_h + 5.0),
            bt = num(MARGIN_TOP + plot_h + 18.0),
            l = tick_label(x)
        );
    }
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let p = py(y);
        let _ = writeln!(
            svg,
            r#"<line class="tick" x1="{l5}" y1="{p}" x2="{l}" y2="{p}" stroke="black"/><text x="{lt}" y="{p}" text-anchor="end" dominant-baseline="middle">{t}</text>"#,
            l5 = num(MARGIN_LEFT - 5.0),
            l = num(MARGIN_LEFT),
            lt = num(MARGIN_LEFT - 8.0),
            p = num(p),
            t = tick_label(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num(MARGIN_LEFT + plot_w / 2.0),
        num(HEIGHT - 10.0),
        escape(&meta.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(&meta.y_label),
        y = num(MARGIN_TOP + plot_h / 2.0)
    );

    for (label, y) in &meta.reference_lines {
        if !y.is_finite() {
            continue;
        }
        let p = num(py(*y));
        let _ = writeln!(
            svg,
            r#"<line class="reference" x1="{}" y1="{p}" x2="{}" y2="{p}" stroke="black" stroke-dasharray="6,4"/><text x="{}" y="{p}" dominant-baseline="middle">{}</text>"#,
            num(MARGIN_LEFT),
            num(MARGIN_LEFT + plot_w),
            num(MARGIN_LEFT + plot_w + 4.0),
            escape(label)
        );
    }

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> =
            s.x.iter()
                .zip(&s.y)
                .map(|(&x, &y)| format!("{},{}", num(px(x)), num(py(y))))
                .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        for (&x, &y) in s.x.iter().zip(&s.y) {
            let _ = writeln!(
                svg,
                r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                num(px(x)),
                num(py(y))
            );
        }
        if let Some(err) = &s.err {
            for ((&x, &y), &e) in s.x.iter().zip(&s.y).zip(err) {
                let xc = px(x);
                let _ = writeln!(
                    svg,
                    r#"<path class="errorbar" d="M{x} {lo} V{hi} M{a} {lo} H{b} M{a} {hi} H{b}" stroke="{color}" fill="none"/>"#,
                    x = num(xc),
                    lo = num(py(y - e)),
                    hi = num(py(y + e)),
                    a = num(xc - 3.0),
                    b = num(xc + 3.0)
                );
            }
        }
        let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{y}" dominant-baseline="middle">{}</text>"#,
            num(lx),
            num(lx + 20.0),
            num(lx + 25.0),
            escape(&s.name),
            y = num(ly)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_line_chart(series: &[Series], meta: &ChartMeta, path: &Path) -> Result<()> {
    let svg = render_line_chart(series, meta)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
