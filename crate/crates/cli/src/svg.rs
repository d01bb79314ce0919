//! Minimal line charts with error bars.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    /// `(x, y, half-width of the error bar)`.
    pub points: Vec<(f64, f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn label(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// An SVG document plotting every series; `log_x` puts x on a log10 scale.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, log_x: bool, series: &[Series]) -> String {
    let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2])));
    let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay1}" x2="{ax1}" y2="{ay1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{ax0}" y1="{ay0}" x2="{ax0}" y2="{ay1}" stroke="black"/>"#);
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let xs = LEFT + f * (W - LEFT - RIGHT);
        let shown = if log_x { 10f64.powf(xv) } else { xv };
        let _ = writeln!(s, r#"<line x1="{xs:.1}" y1="{ay1}" x2="{xs:.1}" y2="{}" stroke="black"/>"#, ay1 + 5.0);
        let _ = writeln!(s, r#"<text x="{xs:.1}" y="{}" text-anchor="middle">{}</text>"#, ay1 + 20.0, label(shown));
        let yv = y0 + f * (y1 - y0);
        let ys = py(yv);
        let _ = writeln!(s, r#"<line x1="{}" y1="{ys:.1}" x2="{ax0}" y2="{ys:.1}" stroke="black"/>"#, ax0 - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, ax0 - 8.0, ys + 4.0, label(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, H - 18.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );

    for (n, ser) in series.iter().enumerate() {
        let c = COLOURS[n % COLOURS.len()];
        let pts: Vec<&(f64, f64, f64)> = ser.points.iter().filter(|p| p.1.is_finite()).collect();
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
        if !path.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        }
        for p in pts {
            let (x, y) = (px(p.0), py(p.1));
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}"/>"#);
            if p.2.is_finite() && p.2 > 0.0 {
                let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}"/>"#, py(p.1 - p.2), py(p.1 + p.2));
            }
        }
        let ly = TOP + 10.0 + 20.0 * n as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, ax1 + 15.0, ax1 + 35.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, ax1 + 40.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_one_polyline_per_series() {
        let s = line_chart(
            "t <x>",
            "K",
            "ELBO",
            true,
            &[
                Series { name: "mp".into(), points: vec![(3.0, -5.0, 0.5), (30.0, -2.0, 0.1)] },
                Series { name: "global".into(), points: vec![(3.0, -9.0, 1.0), (30.0, f64::NEG_INFINITY, 0.0)] },
            ],
        );
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("t &lt;x&gt;"));
        assert!(!s.contains("NaN") && !s.contains("inf"));
    }
}
