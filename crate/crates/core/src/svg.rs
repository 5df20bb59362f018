//! Minimal SVG charts for reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Linear,
    Log,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    ylog: bool,
}

impl Frame {
    fn new(points: impl Iterator<Item = (f64, f64)>, yscale: Scale) -> Self {
        let ylog = yscale == Scale::Log;
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for (x, y) in points {
            let y = if ylog { y.max(1e-300).log10() } else { y };
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y1 = y0 + 1.0;
        }
        Frame {
            x0,
            x1,
            y0,
            y1,
            ylog,
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.ylog { y.max(1e-300).log10() } else { y };
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = write!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
            W / 2.0,
            escape(title),
            H - PAD,
            W - PAD,
            H - PAD,
            H - PAD,
            W / 2.0,
            H - 12.0,
            escape(xlabel),
            H / 2.0,
            H / 2.0,
            escape(ylabel),
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let ylab = if self.ylog {
                format!("1e{yv:.1}")
            } else {
                tick(yv)
            };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                self.px(xv),
                H - PAD + 16.0,
                tick(xv),
                PAD - 4.0,
                H - PAD - f * (H - 2.0 * PAD) + 4.0,
                ylab
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One named polyline.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series<'_>],
    yscale: Scale,
) -> String {
    let frame = Frame::new(series.iter().flat_map(|s| s.points.iter().copied()), yscale);
    let mut out = String::new();
    frame.axes(&mut out, title, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - PAD + 4.0 - 90.0,
            PAD + 14.0 * i as f64,
            color(i),
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot; `groups[i]` selects the color of point `i`.
pub fn scatter(title: &str, points: &[(f64, f64)], groups: &[usize], legend: &[String]) -> String {
    let frame = Frame::new(points.iter().copied(), Scale::Linear);
    let mut out = String::new();
    frame.axes(&mut out, title, "", "");
    for (i, &(x, y)) in points.iter().enumerate() {
        let g = groups.get(i).copied().unwrap_or(0);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            frame.px(x),
            frame.py(y),
            color(g)
        );
    }
    for (i, name) in legend.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - PAD - 40.0,
            PAD + 14.0 * i as f64,
            color(i),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Row-major heatmap with a white-to-blue ramp.
pub fn heatmap(
    title: &str,
    rows: usize,
    cols: usize,
    values: &[f64],
    row_labels: &[String],
) -> String {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cw = (W - 2.0 * PAD) / cols.max(1) as f64;
    let ch = (H - 2.0 * PAD) / rows.max(1) as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="10">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
"#,
        W / 2.0,
        escape(title)
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let f = if v.is_finite() { (v - lo) / span } else { 0.0 };
            let shade = (255.0 * (1.0 - f)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
                PAD + c as f64 * cw,
                PAD + r as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
        if let Some(label) = row_labels.get(r) {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                PAD - 4.0,
                PAD + (r as f64 + 0.7) * ch,
                escape(label)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}">min {} max {}</text>"#,
        H - 20.0,
        tick(lo),
        tick(hi)
    );
    out.push_str("</svg>\n");
    out
}

pub fn save(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}
