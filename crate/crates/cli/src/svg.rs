//! Static SVG scatter of simplex rows.

use std::fmt::Write as _;

use bayestrans_core::analysis::{SimplexRow, SIMPLEX_CORNERS};

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

fn to_px((x, y): (f64, f64)) -> (f64, f64) {
    let scale = SIZE - 2.0 * MARGIN;
    (MARGIN + x * scale, SIZE - MARGIN - y * scale)
}

/// Triangle with corner labels and one dot per row, coloured by argmax.
pub fn simplex_svg(rows: &[SimplexRow], corner_labels: [&str; 3], class_names: &[String]) -> String {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    );
    let corners = SIMPLEX_CORNERS.map(to_px);
    let points: Vec<String> = corners.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        "<polygon points=\"{}\" fill=\"none\" stroke=\"black\"/>",
        points.join(" ")
    );
    for ((x, y), label) in corners.iter().zip(corner_labels) {
        let dy = if *y < SIZE / 2.0 { -8.0 } else { 18.0 };
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            y + dy,
            escape(label)
        );
    }
    for r in rows {
        let (x, y) = to_px((r.x, r.y));
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.5\"/>",
            COLORS[r.argmax % COLORS.len()]
        );
    }
    for (i, name) in class_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"8\" y=\"{}\" font-size=\"11\" fill=\"{}\">{}</text>",
            14 + 13 * i,
            COLORS[i % COLORS.len()],
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
