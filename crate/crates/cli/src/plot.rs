//! Static SVG line plots of a true and a predicted envelope.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 45.0;

fn polyline(out: &mut String, xs: &[f64], ys: &[f64], map: impl Fn(f64, f64) -> (f64, f64), style: &str) {
    let _ = write!(out, "<polyline fill=\"none\" {style} points=\"");
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let (px, py) = map(x, y);
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{px:.2},{py:.2}");
    }
    out.push_str("\"/>\n");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlay of `truth` (solid) and `pred` (dashed) against time in seconds.
pub fn overlay_svg(title: &str, t: &[f64], truth: &[f64], pred: &[f64]) -> String {
    let t_end = t.last().copied().unwrap_or(0.0).max(1e-9);
    let lo = truth.iter().chain(pred).copied().fold(0.0, f64::min);
    let hi = truth.iter().chain(pred).copied().fold(1.0, f64::max);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let map = |x: f64, y: f64| (LEFT + x / t_end * plot_w, TOP + (hi - y) / (hi - lo) * plot_h);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{LEFT}\" y=\"22\" font-size=\"14\">{}</text>",
        escape(title)
    );

    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (_, y) = map(0.0, tick);
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{tick:.2}</text>",
            LEFT - 6.0,
            y + 4.0
        );
    }
    let ticks = 5;
    for i in 0..=ticks {
        let tv = t_end * i as f64 / ticks as f64;
        let (x, _) = map(tv, lo);
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{tv:.2}</text>",
            HEIGHT - BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time (s)</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );

    polyline(&mut s, t, truth, map, "stroke=\"#1f77b4\" stroke-width=\"1.5\"");
    polyline(
        &mut s,
        t,
        pred,
        map,
        "stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"",
    );

    let lx = WIDTH - RIGHT - 190.0;
    let _ = writeln!(
        s,
        "<line x1=\"{lx}\" y1=\"22\" x2=\"{}\" y2=\"22\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/><text x=\"{}\" y=\"26\">true</text>",
        lx + 24.0,
        lx + 30.0
    );
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"22\" x2=\"{}\" y2=\"22\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/><text x=\"{}\" y=\"26\">predicted</text>",
        lx + 70.0,
        lx + 94.0,
        lx + 100.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_point_per_sample() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.001).collect();
        let y: Vec<f64> = t.iter().map(|v| v * 10.0).collect();
        let svg = overlay_svg("a<b", &t, &y, &y);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.matches(',').count() == 50));
    }
}
