//! Minimal SVG line and scatter charts for trace inspection.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
/// Longest polyline drawn per series; longer series are decimated.
const MAX_POINTS: usize = 2000;

pub struct Series<'a> {
    pub label: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str, frame: &Frame) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
    );
    for (v, anchor_y) in [(frame.y0, frame.py(frame.y0)), (frame.y1, frame.py(frame.y1))] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            anchor_y + 4.0,
            tick_label(v)
        );
    }
    for (v, anchor_x) in [(frame.x0, frame.px(frame.x0)), (frame.x1, frame.px(frame.x1))] {
        let _ = writeln!(
            out,
            r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 16.0,
            tick_label(v)
        );
    }
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        let x = W - MARGIN - 90.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 16.0,
            COLORS[i % COLORS.len()],
            x + 20.0,
            y + 4.0,
            escape(label)
        );
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::fit(
        series.iter().flat_map(|s| s.x.iter().copied()),
        series.iter().flat_map(|s| s.y.iter().copied()),
    );
    let mut out = String::new();
    header(&mut out, title, x_label, y_label, &frame);
    for (i, s) in series.iter().enumerate() {
        let stride = s.x.len().div_ceil(MAX_POINTS).max(1);
        let points: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .step_by(stride)
            .map(|(&x, &y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            points.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One column of dots per category; `values[category][run]`.
pub fn scatter_chart(title: &str, y_label: &str, categories: &[String], values: &[Vec<f64>]) -> String {
    let xs: Vec<f64> = (0..categories.len()).map(|i| i as f64).collect();
    let frame = Frame::fit(
        xs.iter().copied().chain([-0.5, categories.len() as f64 - 0.5]),
        values.iter().flatten().copied(),
    );
    let mut out = String::new();
    header(&mut out, title, "", y_label, &frame);
    for (i, (name, runs)) in categories.iter().zip(values).enumerate() {
        let x = frame.px(i as f64);
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 30.0,
            escape(name)
        );
        for (r, &v) in runs.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                x + (r as f64 - runs.len() as f64 / 2.0) * 2.0,
                frame.py(v),
                COLORS[r % COLORS.len()]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_is_well_formed() {
        let x: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let svg = line_chart("t<1>", "x", "y", &[Series { label: "s".into(), x: &x, y: &y }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t&lt;1&gt;"));
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert!(points.split(' ').count() <= MAX_POINTS);
    }

    #[test]
    fn flat_data_gets_a_range() {
        let svg = scatter_chart("s", "V", &["a".into()], &[vec![1.0, 1.0]]);
        assert!(!svg.contains("NaN"));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
