//! Minimal SVG renderings of the ratio map and the ROC curve. They carry no
//! data beyond the CSV files they are drawn from.

use std::fmt::Write;

use fluorosense::analysis::{RatioMap, RocCurve};

const CELL_PX: f64 = 32.0;
const MARGIN_PX: f64 = 40.0;

/// Piecewise-linear approximation of the viridis colour map.
fn colour(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let k = STOPS
        .iter()
        .position(|(t, _)| *t >= v)
        .unwrap_or(STOPS.len() - 1)
        .max(1);
    let (t0, c0) = STOPS[k - 1];
    let (t1, c1) = STOPS[k];
    let f = (v - t0) / (t1 - t0);
    let ch = |i: usize| (c0[i] + f * (c1[i] - c0[i])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

/// Normalised-ratio heatmap. Ground-truth tumour cells get a red outline and
/// cells called positive a white dot. Row 0 is drawn at the bottom.
pub fn heatmap_svg(map: &RatioMap, predicted: &[bool], truth: &[bool]) -> String {
    let w = map.cols as f64 * CELL_PX + 2.0 * MARGIN_PX;
    let h = map.rows as f64 * CELL_PX + 2.0 * MARGIN_PX;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for k in 0..map.len() {
        let (r, c) = (k / map.cols, k % map.cols);
        let x = MARGIN_PX + c as f64 * CELL_PX;
        let y = MARGIN_PX + (map.rows - 1 - r) as f64 * CELL_PX;
        let v = map.normalized_ratio[k];
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="{}"><title>({:.3}, {:.3}) mm: {:.4}</title></rect>"#,
            colour(v),
            map.positions[k].0,
            map.positions[k].1,
            v
        );
        if truth.get(k).copied().unwrap_or(false) {
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="red" stroke-width="3"/>"#,
                x + 1.5,
                y + 1.5,
                CELL_PX - 3.0,
                CELL_PX - 3.0
            );
        }
        if predicted.get(k).copied().unwrap_or(false) {
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="3" fill="white"/>"#,
                x + CELL_PX / 2.0,
                y + CELL_PX / 2.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_PX}" y="{}" font-family="sans-serif" font-size="14">normalised ratio (alpha = {})</text>"#,
        MARGIN_PX - 12.0,
        map.alpha
    );
    s.push_str("</svg>\n");
    s
}

/// ROC curve with the chance diagonal and the AUC in the title.
pub fn roc_svg(curve: &RocCurve) -> String {
    let size = 320.0;
    let full = size + 2.0 * MARGIN_PX;
    let px = |fpr: f64| MARGIN_PX + fpr * size;
    let py = |tpr: f64| MARGIN_PX + (1.0 - tpr) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(s, r#"<rect width="{full}" height="{full}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_PX}" y="{MARGIN_PX}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="grey" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="blue" stroke-width="2"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_PX}" y="{}" font-family="sans-serif" font-size="14">ROC, AUC = {:.3}</text>"#,
        MARGIN_PX - 12.0,
        curve.auc
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">false positive rate</text>"#,
        MARGIN_PX + size / 2.0,
        full - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">true positive rate</text>"#,
        MARGIN_PX + size / 2.0,
        MARGIN_PX + size / 2.0
    );
    s.push_str("</svg>\n");
    s
}
