//! Static SVG charts for reports.

use std::fmt::Write;

use csirff_core::ls::FiveNumber;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0).max(1e-12) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0).max(1e-12) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title))
        .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (W - RIGHT + LEFT) / 2.0,
        H - 12.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (H - BOTTOM + TOP) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn y_axis(out: &mut String, f: &Frame, ticks: usize) {
    let x0 = LEFT;
    let x1 = W - RIGHT;
    for i in 0..=ticks {
        let v = f.y.0 + (f.y.1 - f.y.0) * i as f64 / ticks as f64;
        let y = f.py(v);
        writeln!(out, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, fmt_tick(v)).unwrap();
    }
    writeln!(out, r#"<line x1="{x0}" y1="{}" x2="{x0}" y2="{}" stroke="black"/>"#, TOP, H - BOTTOM).unwrap();
    writeln!(out, r#"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="black"/>"#, H - BOTTOM).unwrap();
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 10.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, i: usize, name: &str) {
    let y = TOP + 10.0 + 18.0 * i as f64;
    let x = W - RIGHT + 12.0;
    let c = COLORS[i % COLORS.len()];
    writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{c}"/>"#, y - 10.0).unwrap();
    writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name)).unwrap();
}

/// Lines over a shared numeric x axis. NaN points are skipped.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    y_range: (f64, f64),
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let f = Frame { x: if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) }, y: y_range };
    let mut out = String::new();
    open(&mut out, title, x_label, y_label);
    y_axis(&mut out, &f, 5);
    if let Some((_, pts)) = series.first() {
        for &(x, _) in pts {
            writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                f.px(x),
                H - BOTTOM + 16.0,
                fmt_tick(x)
            )
            .unwrap();
        }
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let path: Vec<String> =
            pts.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let c = COLORS[i % COLORS.len()];
        writeln!(out, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" ")).unwrap();
        for p in &path {
            let (x, y) = p.split_once(',').unwrap();
            writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{c}"/>"#).unwrap();
        }
        legend(&mut out, i, name);
    }
    out.push_str("</svg>\n");
    out
}

/// One bar per category.
pub fn bar_chart(title: &str, y_label: &str, y_range: (f64, f64), bars: &[(String, f64)]) -> String {
    let n = bars.len().max(1) as f64;
    let f = Frame { x: (0.0, n), y: y_range };
    let mut out = String::new();
    open(&mut out, title, "", y_label);
    y_axis(&mut out, &f, 5);
    for (i, (name, v)) in bars.iter().enumerate() {
        let x0 = f.px(i as f64 + 0.15);
        let x1 = f.px(i as f64 + 0.85);
        let y = f.py(v.clamp(y_range.0, y_range.1));
        writeln!(
            out,
            r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            x1 - x0,
            H - BOTTOM - y,
            COLORS[0]
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - BOTTOM + 16.0,
            escape(name)
        )
        .unwrap();
        writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, (x0 + x1) / 2.0, y - 4.0)
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Box plots from five-number summaries.
pub fn box_chart(title: &str, y_label: &str, boxes: &[(String, FiveNumber)]) -> String {
    let hi = boxes.iter().map(|b| b.1.max).fold(0.0, f64::max);
    let n = boxes.len().max(1) as f64;
    let f = Frame { x: (0.0, n), y: (0.0, if hi > 0.0 { hi * 1.05 } else { 1.0 }) };
    let mut out = String::new();
    open(&mut out, title, "", y_label);
    y_axis(&mut out, &f, 5);
    for (i, (name, s)) in boxes.iter().enumerate() {
        let c = COLORS[(i / 2) % COLORS.len()];
        let (x0, xm, x1) = (f.px(i as f64 + 0.25), f.px(i as f64 + 0.5), f.px(i as f64 + 0.75));
        let (q1, q3) = (f.py(s.q1), f.py(s.q3));
        writeln!(
            out,
            r#"<line x1="{xm:.1}" y1="{:.1}" x2="{xm:.1}" y2="{:.1}" stroke="{c}"/>"#,
            f.py(s.min),
            f.py(s.max)
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect x="{x0:.1}" y="{q3:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="{c}"/>"#,
            x1 - x0,
            q1 - q3
        )
        .unwrap();
        writeln!(
            out,
            r#"<line x1="{x0:.1}" y1="{0:.1}" x2="{x1:.1}" y2="{0:.1}" stroke="{c}" stroke-width="2"/>"#,
            f.py(s.median)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{xm:.1}" y="{}" text-anchor="end" transform="rotate(-30 {xm:.1} {})">{}</text>"#,
            H - BOTTOM + 14.0,
            H - BOTTOM + 14.0,
            escape(name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_and_deterministic() {
        let series = vec![
            ("full".to_string(), vec![(5.0, 20.0), (40.0, 97.0)]),
            ("a<b".to_string(), vec![(5.0, f64::NAN), (40.0, 50.0)]),
        ];
        let a = line_chart("acc", "SNR (dB)", "%", (0.0, 100.0), &series);
        assert_eq!(a, line_chart("acc", "SNR (dB)", "%", (0.0, 100.0), &series));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b") && !a.contains("NaN"));
        let b = bar_chart("by channel", "%", (0.0, 100.0), &[("B-LoS".into(), 90.0)]);
        assert_eq!(b.matches("<rect").count(), 2);
        let five = FiveNumber::of(&[1.0, 2.0, 3.0]);
        let c = box_chart("d", "distance", &[("LoS inter".into(), five)]);
        assert!(c.contains("stroke-width=\"2\""));
    }
}
