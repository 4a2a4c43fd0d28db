//! CSV series and log-log SVG plots.

use std::fmt::Write as _;

use crate::diagnostics::{DiagnosticRow, Quantity, CSV_COLUMNS};

pub const DEFAULT_PLOT_QUANTITIES: [Quantity; 4] =
    [Quantity::FGapAbs, Quantity::Feas, Quantity::Vel, Quantity::Energy];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Header plus one line per row, 17 significant digits per value.
pub fn csv_string(rows: &[DiagnosticRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.values().iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parse a CSV produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<DiagnosticRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty CSV")?;
    if header.split(',').ne(CSV_COLUMNS.iter().copied()) {
        return Err(format!("unexpected CSV header `{header}`"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 2))?;
            if v.len() != CSV_COLUMNS.len() {
                return Err(format!("line {}: expected {} fields, got {}", i + 2, CSV_COLUMNS.len(), v.len()));
            }
            Ok(DiagnosticRow {
                t: v[0],
                f_gap: v[1],
                feas: v[2],
                vel: v[3],
                energy: v[4],
                lag_gap: v[5],
                bregman: v[6],
                grad_resid: v[7],
                dual_resid: v[8],
                stat_resid: v[9],
                acc_t_df: v[10],
                acc_tv2: v[11],
                acc_tgap: v[12],
            })
        })
        .collect()
}

/// A named polyline in data coordinates.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-log plot with decade grid and dashed t⁻¹ and t⁻² guides anchored at
/// the first point of the first series. Nonpositive values are dropped.
pub fn svg_loglog(title: &str, series: &[Series]) -> String {
    const W: f64 = 760.0;
    const H: f64 = 500.0;
    const L: f64 = 70.0;
    const R: f64 = 170.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;

    let logged: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(t, v)| *t > 0.0 && *v > 0.0 && v.is_finite() && t.is_finite())
                .map(|(t, v)| (t.log10(), v.log10()))
                .collect()
        })
        .collect();
    let all = logged.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, mut x1) = (x0.floor(), x1.ceil());
    let (mut y0, mut y1) = (y0.floor(), y1.ceil());
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    y0 = y0.max(y1 - 20.0);
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| T + (y1 - y.clamp(y0, y1)) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (L + W - R) / 2.0, escape(title));
    let ystep = ((y1 - y0) / 10.0).ceil().max(1.0);
    for k in (x0 as i64)..=(x1 as i64) {
        let x = px(k as f64);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{T}" x2="{x:.1}" y2="{}" stroke="#ddd"/>"##, H - B);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{k}</text>"#, H - B + 16.0);
    }
    let mut k = y0;
    while k <= y1 {
        let y = py(k);
        let _ = writeln!(s, r##"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, W - R);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{}</text>"#, L - 6.0, y + 4.0, k as i64);
        k += ystep;
    }
    let _ = writeln!(s, r##"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="#333"/>"##, W - L - R, H - T - B);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, (L + W - R) / 2.0, H - 12.0);

    let mut legend: Vec<(String, String, bool)> = Vec::new();
    if let Some(&(ax, ay)) = logged.first().and_then(|p| p.first()) {
        for (slope, label) in [(-1.0, "t^-1"), (-2.0, "t^-2")] {
            let (bx, by) = (x1, ay + slope * (x1 - ax));
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="6,4"/>"##,
                px(ax), py(ay), px(bx), py(by)
            );
            legend.push((label.into(), "#888".into(), true));
        }
    }
    for (i, (pts, ser)) in logged.iter().zip(series).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        legend.push((ser.name.clone(), color.into(), false));
    }
    for (i, (name, color, dashed)) in legend.iter().enumerate() {
        let y = T + 14.0 + 18.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#,
            W - R + 12.0,
            W - R + 36.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R + 42.0, y + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub fn svg_for_rows(title: &str, rows: &[DiagnosticRow], quantities: &[Quantity]) -> String {
    let series: Vec<Series> = quantities
        .iter()
        .map(|&q| Series {
            name: q.name().to_string(),
            points: rows.iter().map(|r| (r.t, r.get(q))).collect(),
        })
        .collect();
    svg_loglog(title, &series)
}
