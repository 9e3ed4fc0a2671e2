//! Minimal standalone SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let widen = |a: f64, b: f64| if (b - a).abs() < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{cy}" text-anchor="middle" transform="rotate(-90 18 {cy})">{}</text>"#,
        escape(y_label)
    );
}

fn axes(svg: &mut String, frame: &Frame, x_ticks: &[f64]) {
    let (l, r) = (LEFT, WIDTH - RIGHT);
    let (t, b) = (TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let y = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let py = frame.py(y);
        let _ = writeln!(svg, r##"<line x1="{}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/>"##, l - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 8.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for &x in x_ticks {
        let px = frame.px(x);
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            b + 20.0,
            fmt_tick(x)
        );
    }
}

/// Line through `(x, mean)` with `±std` error bars.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, f64)]) -> String {
    let mut svg = String::new();
    open(&mut svg, title, x_label, y_label);
    if points.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let xs = points.iter().map(|p| p.0);
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    let y0 = points.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min).min(0.0);
    let y1 = points.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let pad = 0.05 * (x1 - x0).max(1e-9);
    let frame = Frame::new(x0 - pad, x1 + pad, y0, y1);
    let ticks: Vec<f64> = points.iter().map(|p| p.0).collect();
    axes(&mut svg, &frame, &ticks);
    let line: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", frame.px(p.0), frame.py(p.1)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        line.join(" ")
    );
    for &(x, m, s) in points {
        let (px, lo, hi) = (frame.px(x), frame.py(m - s), frame.py(m + s));
        let _ = writeln!(
            svg,
            r#"<path d="M{px:.2} {lo:.2} L{px:.2} {hi:.2} M{:.2} {lo:.2} L{:.2} {lo:.2} M{:.2} {hi:.2} L{:.2} {hi:.2}" stroke="black"/>"#,
            px - 4.0,
            px + 4.0,
            px - 4.0,
            px + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<circle cx="{px:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            frame.py(m)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Histogram bars from `(bin_start, bin_end, count)`.
pub fn histogram_svg(title: &str, x_label: &str, bins: &[(f64, f64, usize)]) -> String {
    let mut svg = String::new();
    open(&mut svg, title, x_label, "count");
    if bins.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let x0 = bins[0].0;
    let x1 = bins[bins.len() - 1].1;
    let ymax = bins.iter().map(|b| b.2).max().unwrap_or(0).max(1) as f64;
    let frame = Frame::new(x0, x1, 0.0, ymax);
    let mut ticks: Vec<f64> = bins.iter().map(|b| b.0).collect();
    ticks.push(x1);
    if ticks.len() > 11 {
        let step = ticks.len().div_ceil(10);
        ticks = ticks.into_iter().step_by(step).collect();
    }
    axes(&mut svg, &frame, &ticks);
    for &(a, b, c) in bins {
        let (xa, xb) = (frame.px(a), frame.px(b));
        let (ytop, ybot) = (frame.py(c as f64), frame.py(0.0));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{ytop:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            xa,
            (xb - xa).max(0.0),
            (ybot - ytop).max(0.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
