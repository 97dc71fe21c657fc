//! Minimal SVG figures: 2-d scatter of embedded triples and box plots of
//! per-epoch IoU series.

use std::fmt::Write;

use crate::data::Domain;

pub const SYNTHETIC_COLOR: &str = "#40c9c0";
pub const REFINED_COLOR: &str = "#f39c12";
pub const REAL_COLOR: &str = "#2c5fcc";
pub const LINK_COLOR: &str = "#d62728";

pub fn domain_color(d: Domain) -> &'static str {
    match d {
        Domain::Synthetic => SYNTHETIC_COLOR,
        Domain::Refined => REFINED_COLOR,
        Domain::PseudoReal => REAL_COLOR,
    }
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One point per `(domain, x, y)`; `link` draws a polyline through the
/// given points in order.
pub fn scatter_svg(points: &[(Domain, f64, f64)], link: &[(f64, f64)], title: &str) -> String {
    let (x0, x1) = extent(points.iter().map(|p| p.1));
    let (y0, y1) = extent(points.iter().map(|p| p.2));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, title);
    for &(d, x, y) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.8"/>"#,
            sx(x),
            sy(y),
            domain_color(d)
        );
    }
    if link.len() > 1 {
        let path: Vec<String> = link.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{LINK_COLOR}" stroke-width="2"/>"#,
            path.join(" ")
        );
    }
    for (i, (label, d)) in [("synthetic", Domain::Synthetic), ("refined", Domain::Refined), ("real", Domain::PseudoReal)]
        .iter()
        .enumerate()
    {
        let y = 40.0 + 16.0 * i as f64;
        let _ = writeln!(out, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, W - 110.0, domain_color(*d));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{label}</text>"#, W - 100.0, y + 4.0);
    }
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box plot per labeled series (median, quartiles, min-max whiskers) with
/// the raw values overlaid.
pub fn distribution_svg(arms: &[(String, Vec<f64>)], title: &str) -> String {
    let (v0, v1) = extent(arms.iter().flat_map(|a| a.1.iter().copied()));
    let sy = |v: f64| H - MARGIN - (v - v0) / (v1 - v0) * (H - 2.0 * MARGIN);
    let slot = (W - 2.0 * MARGIN) / arms.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        H - MARGIN
    );
    for t in 0..=4 {
        let v = v0 + (v1 - v0) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            sy(v) + 4.0
        );
    }
    for (i, (label, values)) in arms.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 18.0,
            escape(label)
        );
        if values.is_empty() {
            continue;
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
        let half = slot * 0.25;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            sy(sorted[0]),
            sy(*sorted.last().unwrap())
        );
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#dde6f5" stroke="black"/>"##,
            cx - half,
            sy(q3),
            2.0 * half,
            (sy(q1) - sy(q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            sy(med),
            cx + half,
            sy(med)
        );
        for (k, &v) in values.iter().enumerate() {
            let dx = ((k * 37) % 17) as f64 / 16.0 - 0.5;
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{REAL_COLOR}" fill-opacity="0.5"/>"#,
                cx + dx * half,
                sy(v)
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
    fn scatter_has_points_and_link() {
        let pts = [(Domain::Synthetic, 0.0, 0.0), (Domain::Refined, 1.0, 2.0), (Domain::PseudoReal, 2.0, 1.0)];
        let svg = scatter_svg(&pts, &[(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)], "t");
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains(LINK_COLOR) && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn boxes_per_arm() {
        let arms = vec![("a".to_string(), vec![0.1, 0.2, 0.3]), ("b<c".to_string(), vec![0.5; 4])];
        let svg = distribution_svg(&arms, "iou");
        assert_eq!(svg.matches(r##"fill="#dde6f5""##).count(), 2);
        assert!(svg.contains("b&lt;c"));
    }
}
