//! Flow color coding and simple SVG line plots.

use std::fmt::Write as _;

use crate::datamodel::{FlowField, Image};

/// Hue segments of the usual optical-flow color wheel: red, yellow, green,
/// cyan, blue, magenta.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f32; 3]> {
    let mut wheel = Vec::with_capacity(55);
    let ramps: [([f32; 3], [f32; 3]); 6] = [
        ([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]),
        ([1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),
        ([0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),
        ([0.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
        ([0.0, 0.0, 1.0], [1.0, 0.0, 1.0]),
        ([1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ];
    for (n, (a, b)) in SEGMENTS.iter().zip(ramps) {
        for i in 0..*n {
            let t = i as f32 / *n as f32;
            wheel.push([0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t));
        }
    }
    wheel
}

/// Direction to hue, magnitude (relative to `max_magnitude`, or the field's
/// own maximum) to saturation. Zero flow is white.
pub fn flow_to_image(flow: &FlowField, max_magnitude: Option<f32>) -> Image {
    let wheel = color_wheel();
    let n = wheel.len() as f32;
    let max = max_magnitude.unwrap_or_else(|| flow.max_magnitude()).max(1e-6);
    let mut data = Vec::with_capacity(flow.height() * flow.width() * 3);
    for uv in flow.data().chunks_exact(2) {
        let (u, v) = (uv[0], uv[1]);
        let rad = ((u * u + v * v).sqrt() / max).min(1.0);
        let angle = (-v).atan2(-u) / std::f32::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (n - 1.0);
        let k0 = fk.floor() as usize % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let f = fk - fk.floor();
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            data.push(1.0 - rad * (1.0 - col));
        }
    }
    Image::new(flow.height(), flow.width(), 3, data).expect("flow dims are valid image dims")
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Minimal line chart.
pub fn svg_line_plot(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * m);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for t in [0.0, 0.5, 1.0] {
        let (xv, yv) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#, sx(xv), h - m + 16.0, xv);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#, m - 6.0, sy(yv) + 4.0, yv);
    }
    for (i, se) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let d: Vec<String> = se.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#, w - m, escape(&se.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
