//! Log-log SVG plots of averaged curves.

use std::fmt::Write as _;

use super::fit::{MeanCurve, RateFit};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One plotted series with optional fitted and reference lines.
pub struct Series<'a> {
    pub label: &'a str,
    pub curve: &'a MeanCurve,
    pub fit: Option<&'a RateFit>,
    /// Reference slope drawn through the start of the fit window.
    pub predicted_slope: Option<f64>,
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, lx: f64) -> f64 {
        LEFT + (lx - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, ly: f64) -> f64 {
        HEIGHT - BOTTOM - (ly - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Renders `series` on log-log axes. The horizontal axis is `t + 1`.
pub fn render_svg(title: &str, series: &[Series<'_>]) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (t, v) in s.curve.t.iter().zip(&s.curve.mean) {
            if *v > 0.0 && v.is_finite() {
                xs.push(((t + 1) as f64).log10());
                ys.push(v.log10());
            }
        }
    }
    let range = |v: &[f64]| -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo.floor() - 1.0, hi.ceil() + 1.0)
        } else {
            (lo.floor(), hi.ceil())
        }
    };
    let axes = Axes {
        x: range(&xs),
        y: range(&ys),
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    // Grid and tick labels at integer decades.
    for d in (axes.x.0 as i64)..=(axes.x.1 as i64) {
        let x = axes.px(d as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"##,
            HEIGHT - BOTTOM,
            HEIGHT - BOTTOM + 16.0
        );
    }
    for d in (axes.y.0 as i64)..=(axes.y.1 as i64) {
        let y = axes.py(d as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t + 1</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s
            .curve
            .t
            .iter()
            .zip(&s.curve.mean)
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(t, v)| format!("{:.2},{:.2}", axes.px(((t + 1) as f64).log10()), axes.py(v.log10())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let mut legend = s.label.to_string();
        if let Some(f) = s.fit {
            let line = |lx: f64| f.intercept / std::f64::consts::LN_10 + f.slope * lx;
            let (a, b) = (((f.window.0 + 1) as f64).log10(), ((f.window.1 + 1) as f64).log10());
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="6 3"/>"#,
                axes.px(a),
                axes.py(line(a)),
                axes.px(b),
                axes.py(line(b))
            );
            let _ = write!(legend, " (fit {:.3}", f.slope);
            if let Some(p) = s.predicted_slope {
                let y0 = line(a);
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="1 3" stroke-width="1.5"/>"#,
                    axes.px(a),
                    axes.py(y0),
                    axes.px(b),
                    axes.py(y0 + p * (b - a))
                );
                let _ = write!(legend, ", predicted {p:.3}");
            }
            legend.push(')');
        }
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            WIDTH - RIGHT - 250.0,
            ly - 4.0,
            WIDTH - RIGHT - 230.0,
            ly - 4.0,
            WIDTH - RIGHT - 225.0,
            ly,
            escape(&legend)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
