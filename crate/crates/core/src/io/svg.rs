//! Static SVG plot of P̄-R curves.

use std::fmt::Write as _;

use crate::eval::PbarRCurve;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Recall on x, P̄ on y, one polyline per named curve and a legend with AUCs.
pub fn plot_curves(curves: &[(String, &PbarRCurve)]) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let sx = |r: f64| m + r * pw;
    let sy = |p: f64| h - m - p * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#ddd"/><line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/>"##,
            x = sx(t),
            y = sy(t),
            x0 = sx(0.0),
            x1 = sx(1.0),
            y0 = sy(0.0),
            y1 = sy(1.0)
        );
        if k % 2 == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{t:.1}</text><text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#,
                sx(t),
                sy(0.0) + 15.0,
                sx(0.0) - 5.0,
                sy(t) + 4.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Recall</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">P&#772;</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.recall), sy(p.pbar)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = m + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{} (AUC {:.4})</text>"#,
            sx(0.55),
            ly - 4.0,
            sx(0.62),
            ly - 4.0,
            sx(0.64),
            ly,
            escape(name),
            curve.auc
        );
    }
    s.push_str("</svg>\n");
    s
}
