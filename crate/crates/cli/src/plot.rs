//! Hand-rolled SVG scatter of true against predicted MOS, with the identity
//! diagonal, and its CSV sidecar.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub id: String,
    pub true_mos: f64,
    pub predicted_mos: f64,
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const LO: f64 = 1.0;
const HI: f64 = 5.0;

fn to_px(v: f64) -> f64 {
    MARGIN + (v.clamp(LO, HI) - LO) / (HI - LO) * (SIZE - 2.0 * MARGIN)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// True MOS on x, predicted on y, both over [1, 5].
pub fn scatter_svg(points: &[Point], title: &str) -> String {
    let mut s = String::new();
    let (a, b) = (to_px(LO), to_px(HI));
    let y = |v: f64| SIZE - to_px(v);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{a}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        y(HI),
        b - a,
        b - a
    );
    for tick in 1..=5 {
        let v = tick as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{tick}</text>"#,
            to_px(v),
            y(LO) + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"#,
            a - 8.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">true MOS</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">predicted MOS</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{a}" y1="{}" x2="{b}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        y(LO),
        y(HI)
    );
    for p in points {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" fill-opacity="0.7"><title>{}</title></circle>"##,
            to_px(p.true_mos),
            y(p.predicted_mos),
            escape(&p.id)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn scatter_csv(points: &[Point]) -> String {
    let mut s = String::from("id,true_mos,predicted_mos\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.id, p.true_mos, p.predicted_mos);
    }
    s
}
