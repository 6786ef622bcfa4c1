//! Minimal SVG heat maps for slice grids.

use std::fmt::Write;

// a short dark-to-light ramp, interpolated linearly
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (RAMP.len() - 1) as f64;
    let i = (s.floor() as usize).min(RAMP.len() - 2);
    let f = s - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Render `values` (row-major, `ppd` by `ppd`, x varying slowest) as a
/// square heat map with y increasing upwards.
pub fn heat_map(title: &str, x_label: &str, y_label: &str, ppd: usize, values: &[f64]) -> String {
    let cell = (400 / ppd).max(1);
    let side = cell * ppd;
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">"#,
        side + 60,
        side + 60
    );
    let _ = writeln!(s, r#"<text x="40" y="16">{title} [{lo:.4}, {hi:.4}]</text>"#);
    for a in 0..ppd {
        for b in 0..ppd {
            let v = values[a * ppd + b];
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                40 + a * cell,
                24 + (ppd - 1 - b) * cell,
                colour((v - lo) / span)
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{x_label}</text>"#, 40 + side / 2, side + 44);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})">{y_label}</text>"#,
        24 + side / 2,
        24 + side / 2
    );
    s.push_str("</svg>\n");
    s
}
