//! Standalone SVG line plots of trajectories: one panel per component.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::integrator::Trajectory;
use crate::model::COMPONENTS;

pub const WIDTH: f64 = 1000.0;
pub const HEIGHT: f64 = 600.0;

/// Points drawn per series; longer runs are thinned evenly.
const MAX_POINTS: usize = 2000;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders `series` (time, four component values) as a 2×2 grid of panels.
pub fn render(title: &str, series: &[(f64, [f64; 4])]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let stride = series.len().div_ceil(MAX_POINTS).max(1);
    let (t0, t1) = match (series.first(), series.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => (0.0, 1.0),
    };
    let t_span = if t1 > t0 { t1 - t0 } else { 1.0 };

    let (pw, ph) = (WIDTH / 2.0, (HEIGHT - 30.0) / 2.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 25.0, 40.0);
    for (c, name) in COMPONENTS.iter().enumerate() {
        let ox = (c % 2) as f64 * pw;
        let oy = 30.0 + (c / 2) as f64 * ph;
        let (x0, x1) = (ox + ml, ox + pw - mr);
        let (y0, y1) = (oy + mt, oy + ph - mb);

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, s) in series {
            lo = lo.min(s[c]);
            hi = hi.max(s[c]);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            lo -= 0.5 * lo.abs().max(1.0);
            hi += 0.5 * hi.abs().max(1.0);
        }
        let sx = |t: f64| x0 + (t - t0) / t_span * (x1 - x0);
        let sy = |v: f64| y1 - (v - lo) / (hi - lo) * (y1 - y0);

        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            x1 - x0,
            y1 - y0
        );
        for (v, y) in [(lo, y1), (hi, y0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        for (t, anchor) in [(t0, "start"), (t1, "end")] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
                sx(t),
                y1 + 15.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{name}(t)</text>"#,
            (x0 + x1) / 2.0,
            y0 - 6.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">t</text>"#,
            (x0 + x1) / 2.0,
            y1 + 28.0
        );

        let mut path = String::new();
        let last = series.len().saturating_sub(1);
        for (i, (t, s)) in series.iter().enumerate() {
            if i % stride == 0 || i == last {
                let cmd = if path.is_empty() { 'M' } else { 'L' };
                let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(*t), sy(s[c]));
            }
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            path.trim_end(),
            COLORS[c]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_trajectory_svg(traj: &Trajectory, title: &str, path: &Path) -> Result<()> {
    let series: Vec<(f64, [f64; 4])> = traj.points().map(|(t, s)| (t, s.to_array())).collect();
    std::fs::write(path, render(title, &series))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_viewport_and_four_series() {
        let series: Vec<(f64, [f64; 4])> = (0..5000)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, [t, t.sin() + 1.0, 2.0, (-t).exp()])
            })
            .collect();
        let svg = render("a <b>", &series);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"viewBox="0 0 1000 600""#));
        assert_eq!(svg.matches("<path ").count(), 4);
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // flat series still render inside the panel
        assert!(!svg.contains("NaN"));
        let longest = svg
            .lines()
            .filter(|l| l.starts_with("<path"))
            .map(|l| l.matches('L').count())
            .max();
        assert!(longest.unwrap() <= MAX_POINTS + 1);
    }

    #[test]
    fn ticks() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(2.5), "2.5");
        assert_eq!(fmt_tick(666.6666667), "666.667");
        assert_eq!(fmt_tick(2e-5), "2.00e-5");
    }
}
