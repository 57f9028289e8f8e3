//! Bare-bones SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn fit(series: &[Series], log_y: bool) -> Self {
        let pts = series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0));
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for &(px, py) in pts {
            let py = if log_y { py.log10() } else { py };
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        }
        let widen = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
            log_y,
        }
    }

    fn map(&self, px: f64, py: f64) -> Option<(f64, f64)> {
        let py = if self.log_y {
            if py <= 0.0 {
                return None;
            }
            py.log10()
        } else {
            py
        };
        if !(px.is_finite() && py.is_finite()) {
            return None;
        }
        let sx = LEFT + (px - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT);
        let sy = H - BOTTOM - (py - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM);
        Some((sx, sy))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn axes(out: &mut String, frame: &Frame, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>
"##,
        (LEFT + W - RIGHT) / 2.0,
        escape(title),
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let sx = LEFT + f * (W - LEFT - RIGHT);
        let _ = writeln!(
            out,
            r#"<text x="{sx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 15.0,
            tick_label(xv)
        );
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let label = if frame.log_y { format!("1e{yv:.1}") } else { tick_label(yv) };
        let sy = H - BOTTOM - f * (H - TOP - BOTTOM);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, LEFT - 5.0, sy + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, series: &[Series]) {
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 35.0,
            y + 4.0,
            escape(&s.name)
        );
    }
}

fn polyline(out: &mut String, frame: &Frame, s: &Series, color: &str) {
    let pts: Vec<String> = s
        .points
        .iter()
        .filter_map(|&(x, y)| frame.map(x, y))
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    if !pts.is_empty() {
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
    }
}

/// Line chart, optionally with a log10 y axis.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let frame = Frame::fit(series, log_y);
    let mut out = String::new();
    axes(&mut out, &frame, title, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        polyline(&mut out, &frame, s, COLORS[i % COLORS.len()]);
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Sample paths in the plane: points joined in visiting order.
pub fn path_chart(title: &str, series: &[Series]) -> String {
    let frame = Frame::fit(series, false);
    let mut out = String::new();
    axes(&mut out, &frame, title, "x1", "x2");
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        polyline(&mut out, &frame, s, c);
        for (x, y) in s.points.iter().filter_map(|&(x, y)| frame.map(x, y)) {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{c}"/>"#);
        }
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}
