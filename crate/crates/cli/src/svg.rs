//! Minimal SVG plots: scatter panels, grouped bar charts and line charts.
//! Output is a pure function of the input, with no timestamps.

use std::fmt::Write;

const PANEL: f64 = 420.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn text(out: &mut String, x: f64, y: f64, anchor: &str, s: &str) {
    let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#, escape(s));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Maps `[lo, hi]` onto `[a, b]`, guarding against an empty range.
fn scale(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    move |v| a + (v - lo) / span * (b - a)
}

fn hue(t: f64) -> String {
    // HSL with full saturation and 45% lightness
    let h = (t.rem_euclid(1.0)) * 6.0;
    let c = 0.9;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = 0.45 - c / 2.0;
    let to = |v: f64| ((v + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

/// Side-by-side scatter panels of 2-d points (first two coordinates), each
/// scaled to its own bounding box with equal aspect. Points are coloured by
/// `color_key` (in `[0, 1)`), so the same point has the same colour in every
/// panel.
pub fn scatter(panels: &[(&str, Vec<[f64; 2]>)], color_key: &[f64]) -> String {
    let width = PANEL * panels.len() as f64;
    let mut out = String::new();
    header(&mut out, width, PANEL + 24.0);
    for (p, (title, pts)) in panels.iter().enumerate() {
        let x0 = PANEL * p as f64;
        text(&mut out, x0 + PANEL / 2.0, 20.0, "middle", title);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for q in pts {
            for c in 0..2 {
                lo[c] = lo[c].min(q[c]);
                hi[c] = hi[c].max(q[c]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
        let inner = PANEL - 2.0 * MARGIN;
        let sx = |v: f64| x0 + MARGIN + (v - lo[0]) / span * inner;
        let sy = |v: f64| 24.0 + PANEL - MARGIN - (v - lo[1]) / span * inner;
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{inner:.1}" height="{inner:.1}" fill="none" stroke="#999"/>"##,
            x0 + MARGIN,
            24.0 + MARGIN
        );
        text(&mut out, x0 + MARGIN, PANEL + 16.0, "start", &format!("x {} .. {}", tick(lo[0]), tick(lo[0] + span)));
        text(&mut out, x0 + PANEL - MARGIN, PANEL + 16.0, "end", &format!("y {} .. {}", tick(lo[1]), tick(lo[1] + span)));
        for (i, q) in pts.iter().enumerate() {
            let color = hue(color_key.get(i).copied().unwrap_or(0.0));
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{color}"/>"#, sx(q[0]), sy(q[1]));
        }
    }
    out.push_str("</svg>\n");
    out
}

pub struct BarChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    /// `bins + 1` edges.
    pub bin_edges: &'a [f64],
    pub series: Vec<(&'a str, Vec<f64>)>,
    pub log_y: bool,
    /// Dashed vertical line at this x.
    pub reference: Option<(f64, String)>,
}

/// Grouped bars, one colour per series. Log scale plots `log10(1 + count)`.
pub fn bar_chart(chart: &BarChart<'_>) -> String {
    let (w, h) = (720.0, 420.0);
    let mut out = String::new();
    header(&mut out, w, h);
    text(&mut out, w / 2.0, 20.0, "middle", chart.title);
    let bins = chart.bin_edges.len().saturating_sub(1).max(1);
    let tf = |v: f64| if chart.log_y { (1.0 + v.max(0.0)).log10() } else { v };
    let top = chart.series.iter().flat_map(|(_, c)| c.iter().map(|&v| tf(v))).fold(0.0, f64::max);
    let (lo, hi) = (chart.bin_edges[0], chart.bin_edges[bins]);
    let sx = scale(lo, hi, MARGIN, w - MARGIN);
    let sy = scale(0.0, top, h - MARGIN, MARGIN);
    let slot = (sx(chart.bin_edges[1]) - sx(lo)) / chart.series.len().max(1) as f64;
    for (s, (_, counts)) in chart.series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for (b, &c) in counts.iter().enumerate().take(bins) {
            let x = sx(chart.bin_edges[b]) + slot * s as f64;
            let y = sy(tf(c));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                (slot * 0.9).max(0.5),
                (h - MARGIN - y).max(0.0)
            );
        }
    }
    legend(&mut out, w, chart.series.iter().map(|(name, _)| *name));
    axes(&mut out, w, h, (lo, hi), top, chart.x_label, if chart.log_y { "log10(1 + count)" } else { "count" });
    if let Some((x, label)) = &chart.reference {
        let px = sx(*x);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{MARGIN}" x2="{px:.2}" y2="{:.1}" stroke="#000" stroke-dasharray="4 3"/>"##,
            h - MARGIN
        );
        text(&mut out, px + 4.0, MARGIN + 12.0, "start", label);
    }
    out.push_str("</svg>\n");
    out
}

/// Polylines over a shared x axis; non-positive values are skipped on a log
/// scale.
pub fn line_chart(title: &str, x_label: &str, x: &[f64], series: &[(&str, Vec<f64>)], log_y: bool) -> String {
    let (w, h) = (720.0, 420.0);
    let mut out = String::new();
    header(&mut out, w, h);
    text(&mut out, w / 2.0, 20.0, "middle", title);
    let tf = |v: f64| if log_y { v.log10() } else { v };
    let vals = || series.iter().flat_map(|(_, s)| s.iter().map(|&v| tf(v))).filter(|v| v.is_finite());
    let (ylo, yhi) = (vals().fold(f64::INFINITY, f64::min), vals().fold(f64::NEG_INFINITY, f64::max));
    let (ylo, yhi) = if ylo.is_finite() { (ylo, yhi) } else { (0.0, 1.0) };
    let (xlo, xhi) = (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0));
    let sx = scale(xlo, xhi, MARGIN, w - MARGIN);
    let sy = scale(ylo, yhi, h - MARGIN, MARGIN);
    for (s, (_, ys)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(_, &y)| tf(y).is_finite())
            .map(|(&xv, &y)| format!("{:.2},{:.2}", sx(xv), sy(tf(y))))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
    }
    legend(&mut out, w, series.iter().map(|(name, _)| *name));
    let y_label = if log_y { "log10(value)" } else { "value" };
    axes_range(&mut out, w, h, (xlo, xhi), (ylo, yhi), x_label, y_label);
    out.push_str("</svg>\n");
    out
}

fn legend<'a>(out: &mut String, w: f64, names: impl ExactSizeIterator<Item = &'a str>) {
    let rows = names.len() as f64;
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="165" height="{:.1}" fill="white" fill-opacity="0.85" stroke="#ccc"/>"##,
        w - 176.0,
        MARGIN - 16.0,
        16.0 * rows + 8.0
    );
    for (s, name) in names.enumerate() {
        let ly = MARGIN + 16.0 * s as f64;
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, w - 170.0, ly - 9.0);
        text(out, w - 155.0, ly, "start", name);
    }
}

fn axes(out: &mut String, w: f64, h: f64, x: (f64, f64), top: f64, x_label: &str, y_label: &str) {
    axes_range(out, w, h, x, (0.0, top), x_label, y_label);
}

fn axes_range(out: &mut String, w: f64, h: f64, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r##"<polyline points="{MARGIN},{MARGIN} {MARGIN},{b:.1} {r:.1},{b:.1}" fill="none" stroke="#000"/>"##,
        b = h - MARGIN,
        r = w - MARGIN
    );
    text(out, MARGIN, h - MARGIN + 16.0, "middle", &tick(x.0));
    text(out, w - MARGIN, h - MARGIN + 16.0, "middle", &tick(x.1));
    text(out, w / 2.0, h - 12.0, "middle", x_label);
    text(out, MARGIN - 4.0, h - MARGIN, "end", &tick(y.0));
    text(out, MARGIN - 4.0, MARGIN + 4.0, "end", &tick(y.1));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_draws_every_point_in_every_panel() {
        let pts = vec![[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]];
        let svg = scatter(&[("a", pts.clone()), ("b", pts)], &[0.0, 0.3, 0.6]);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn bar_chart_handles_empty_counts_and_log_scale() {
        let edges = [0.0, 0.5, 1.0];
        let svg = bar_chart(&BarChart {
            title: "t <x>",
            x_label: "x",
            bin_edges: &edges,
            series: vec![("a", vec![0.0, 0.0]), ("b", vec![3.0, 100.0])],
            log_y: true,
            reference: Some((0.25, "ref".into())),
        });
        assert_eq!(svg.matches("<rect").count(), 1 + 4 + 1 + 2);
        assert!(svg.contains("t &lt;x&gt;") && svg.contains("stroke-dasharray"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn hue_is_a_hex_colour() {
        for t in [0.0, 0.2, 0.5, 0.99] {
            let c = hue(t);
            assert_eq!(c.len(), 7);
            assert!(c.starts_with('#'));
        }
    }
}
