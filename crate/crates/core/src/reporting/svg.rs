//! Hand-written SVG. Coordinates are integers and every printed number goes
//! through exact rounding, so output is identical on every platform.

use std::fmt::Write;

use super::ReportBundle;
use crate::metrics::{round_half_up, AmplificationEdge, PairAnalysis, Share};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn open(width: u64, height: u64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <title>{}</title>\n<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n",
        escape(title)
    )
}

/// `count / total` scaled to `span` pixels, rounded half up.
fn scaled(count: u64, total: u64, span: u64) -> u64 {
    if total == 0 {
        return 0;
    }
    (2 * count * span + total) / (2 * total)
}

fn percent_label(share: Share) -> String {
    if share.total == 0 {
        return "0.0%".into();
    }
    format!("{}%", share.percent(1))
}

const BAR_SPAN: u64 = 400;
const LABEL_WIDTH: u64 = 190;
const ROW: u64 = 22;

/// Horizontal bars: share of incidents per category.
pub fn category_bar_svg(bundle: &ReportBundle) -> String {
    let n = bundle.causal.n_incidents;
    let categories = bundle.category_order();
    let height = 40 + ROW * categories.len() as u64 + 10;
    let width = LABEL_WIDTH + BAR_SPAN + 80;
    let mut out = open(width, height, "Share of incidents with each category causally relevant");
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"20\" {FONT} font-weight=\"bold\">Category prevalence (N = {n})</text>"
    );
    for (i, c) in categories.iter().enumerate() {
        let share = Share {
            count: bundle.causal.category_count(*c),
            total: n,
        };
        let y = 40 + ROW * i as u64;
        let w = scaled(share.count, n, BAR_SPAN);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>",
            LABEL_WIDTH - 8,
            y + 14,
            escape(c.name())
        );
        let _ = writeln!(
            out,
            "<rect class=\"bar\" x=\"{LABEL_WIDTH}\" y=\"{y}\" width=\"{w}\" height=\"{}\" fill=\"#4c72b0\"/>",
            ROW - 6
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>",
            LABEL_WIDTH + w + 6,
            y + 14,
            percent_label(share)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Paired bars per value: overall (grey) above causal (white, outlined).
pub fn value_bar_svg(bundle: &ReportBundle) -> String {
    let n = bundle.causal.n_incidents;
    let mut lines = Vec::new();
    for category in bundle.value_categories() {
        lines.push((category.name().to_string(), None));
        for v in bundle.values_for(category) {
            lines.push((v.value.clone(), Some(v)));
        }
    }
    let pair_height = 2 * (ROW - 8) + 8;
    let height = 60
        + lines
            .iter()
            .map(|(_, v)| if v.is_some() { pair_height } else { ROW })
            .sum::<u64>()
        + 10;
    let width = LABEL_WIDTH + BAR_SPAN + 80;
    let mut out = open(width, height, "Value prevalence, overall and causally relevant");
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"20\" {FONT} font-weight=\"bold\">Value prevalence (N = {n})</text>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{LABEL_WIDTH}\" y=\"30\" width=\"12\" height=\"12\" fill=\"#bbbbbb\"/><text x=\"{}\" y=\"40\" {FONT}>overall</text>",
        LABEL_WIDTH + 18
    );
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"30\" width=\"12\" height=\"12\" fill=\"#ffffff\" stroke=\"#333333\"/><text x=\"{}\" y=\"40\" {FONT}>causal</text>",
        LABEL_WIDTH + 90,
        LABEL_WIDTH + 108
    );
    let mut y = 60;
    for (label, value) in &lines {
        match value {
            None => {
                let _ = writeln!(
                    out,
                    "<text x=\"10\" y=\"{}\" {FONT} font-weight=\"bold\">{}</text>",
                    y + 14,
                    escape(label)
                );
                y += ROW;
            }
            Some(v) => {
                let _ = writeln!(
                    out,
                    "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>",
                    LABEL_WIDTH - 8,
                    y + 16,
                    escape(label)
                );
                let bars = [
                    ("overall", bundle.overall.value_count(v), "fill=\"#bbbbbb\""),
                    (
                        "causal",
                        bundle.causal.value_count(v),
                        "fill=\"#ffffff\" stroke=\"#333333\"",
                    ),
                ];
                for (k, (class, count, style)) in bars.into_iter().enumerate() {
                    let by = y + k as u64 * (ROW - 8);
                    let w = scaled(count, n, BAR_SPAN);
                    let _ = writeln!(
                        out,
                        "<rect class=\"{class}\" x=\"{LABEL_WIDTH}\" y=\"{by}\" width=\"{w}\" height=\"{}\" {style}/>",
                        ROW - 10
                    );
                    let _ = writeln!(
                        out,
                        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
                        LABEL_WIDTH + w + 6,
                        by + 10,
                        percent_label(Share { count, total: n })
                    );
                }
                y += pair_height;
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

const CELL: u64 = 90;

/// Grey level for a share: white at 0, dark at 1.
fn shade(share: Share) -> String {
    let level = 255 - scaled(share.count, share.total.max(1), 200);
    format!("rgb({level},{level},{level})")
}

/// Category-pair matrix; one `rect.cell` per cell, labelled "count (pct%)".
pub fn heatmap_svg(pairs: &PairAnalysis) -> String {
    let k = pairs.categories.len() as u64;
    let margin = 150;
    let size = margin + CELL * k + 20;
    let mut out = open(size, size, "Incidents with both categories causally relevant");
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"20\" {FONT} font-weight=\"bold\">Category intersections</text>"
    );
    for (i, c) in pairs.categories.iter().enumerate() {
        let pos = margin + CELL * i as u64 + CELL / 2;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{pos}\" {FONT} text-anchor=\"end\">{}</text>",
            margin - 8,
            escape(c.name())
        );
        let _ = writeln!(
            out,
            "<text x=\"{pos}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>",
            margin - 8,
            escape(c.name())
        );
    }
    for (idx, cell) in pairs.matrix.iter().enumerate() {
        let (row, col) = (idx as u64 / k.max(1), idx as u64 % k.max(1));
        let (x, y) = (margin + CELL * col, margin + CELL * row);
        let dark = cell.share.total > 0 && 2 * cell.share.count > cell.share.total;
        let _ = writeln!(
            out,
            "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\" stroke=\"#ffffff\"/>",
            shade(cell.share)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\" fill=\"{}\">{} ({})</text>",
            x + CELL / 2,
            y + CELL / 2 + 4,
            if dark { "#ffffff" } else { "#000000" },
            cell.share.count,
            percent_label(cell.share)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Stroke width in tenths of a pixel: one pixel plus two per unit of score,
/// capped at twelve.
fn stroke_tenths(edge: &AmplificationEdge) -> u64 {
    let num = u128::from(edge.observed) * u128::from(edge.n_total) * 20;
    let den = u128::from(edge.n_a) * u128::from(edge.n_b);
    let tenths = 10 + ((2 * num + den) / (2 * den)) as u64;
    tenths.min(120)
}

/// Node-link diagram: values on a circle, one line per co-occurring pair
/// with width growing with the amplification score. Pairs below the support
/// threshold are dashed.
pub fn amplification_svg(pairs: &PairAnalysis) -> String {
    let mut nodes: Vec<_> = pairs
        .edges
        .iter()
        .flat_map(|e| [e.value_a.clone(), e.value_b.clone()])
        .collect();
    nodes.sort();
    nodes.dedup();
    let size: i64 = 720;
    let (cx, cy, radius) = (size / 2, size / 2, 260i64);
    let mut out = open(size as u64, size as u64, "Amplification scores between identity values");
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"20\" {FONT} font-weight=\"bold\">Amplification</text>"
    );
    // Positions from an integer table of unit-circle points scaled by 1000,
    // so layout never depends on floating-point trigonometry.
    let position = |i: usize| -> (i64, i64) {
        let n = nodes.len().max(1) as i64;
        let (s, c) = unit_circle(i as i64, n);
        (cx + radius * c / 1000, cy + radius * s / 1000)
    };
    for e in &pairs.edges {
        let a = nodes.binary_search(&e.value_a).expect("node listed");
        let b = nodes.binary_search(&e.value_b).expect("node listed");
        let ((x1, y1), (x2, y2)) = (position(a), position(b));
        let w = stroke_tenths(e);
        let dash = if e.support_ok { "" } else { " stroke-dasharray=\"4 3\"" };
        let _ = writeln!(
            out,
            "<line class=\"edge\" x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#c44e52\" stroke-width=\"{}.{}\"{dash}/>",
            w / 10,
            w % 10
        );
        let (mx, my) = ((x1 + x2) / 2, (y1 + y2) / 2);
        let _ = writeln!(
            out,
            "<circle cx=\"{mx}\" cy=\"{my}\" r=\"16\" fill=\"#ffffff\" stroke=\"#c44e52\"/><text x=\"{mx}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}\u{d7}</text>",
            my + 4,
            round_half_up(
                u128::from(e.observed) * u128::from(e.n_total),
                u128::from(e.n_a) * u128::from(e.n_b),
                2
            )
        );
    }
    for (i, v) in nodes.iter().enumerate() {
        let (x, y) = position(i);
        let _ = writeln!(
            out,
            "<circle class=\"node\" cx=\"{x}\" cy=\"{y}\" r=\"6\" fill=\"#4c72b0\"/><text x=\"{x}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>",
            y - 10,
            escape(&v.to_string())
        );
    }
    out.push_str("</svg>\n");
    out
}

/// `(sin, cos)` of `2 pi i / n`, scaled by 1000, in integer arithmetic.
fn unit_circle(i: i64, n: i64) -> (i64, i64) {
    // Angle in millionths of a turn, starting at the top and going clockwise.
    let turn = (i * 1_000_000 / n + 750_000) % 1_000_000;
    (sin_milli(turn), sin_milli((turn + 250_000) % 1_000_000))
}

/// `1000 * sin(2 pi t / 10^6)` via Bhaskara's approximation, integer only.
fn sin_milli(t: i64) -> i64 {
    let (half, sign) = if t < 500_000 { (t, 1) } else { (t - 500_000, -1) };
    // Bhaskara I: sin(x) ~ 16 x (pi - x) / (5 pi^2 - 4 x (pi - x)), x in [0, pi];
    // with x = pi * h / 500000 the pi factors cancel.
    let p = half * (500_000 - half);
    let value = (16 * p * 1000) / (5 * 500_000 * 500_000 - 4 * p);
    sign * value
}

#[cfg(test)]
mod tests {
    use super::super::tests::bundle;
    use super::*;

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed svg")
    }

    #[test]
    fn all_plots_are_well_formed() {
        let b = bundle();
        for svg in [
            category_bar_svg(&b),
            value_bar_svg(&b),
            heatmap_svg(&b.pairs),
            amplification_svg(&b.pairs),
        ] {
            parse(&svg);
        }
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let b = bundle();
        let svg = heatmap_svg(&b.pairs);
        let doc = parse(&svg);
        let cells = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect") && n.attribute("class") == Some("cell"))
            .count();
        assert_eq!(cells, b.pairs.matrix.len());
        assert!(svg.contains(">3 (60.0%)<"), "{svg}");
    }

    #[test]
    fn empty_heatmap_is_valid() {
        let empty = PairAnalysis {
            categories: vec![],
            matrix: vec![],
            edges: vec![],
        };
        let svg = heatmap_svg(&empty);
        let doc = parse(&svg);
        assert_eq!(
            doc.descendants()
                .filter(|n| n.attribute("class") == Some("cell"))
                .count(),
            0
        );
        parse(&amplification_svg(&empty));
    }

    #[test]
    fn circle_table() {
        assert_eq!(sin_milli(0), 0);
        assert_eq!(sin_milli(250_000), 1000);
        assert_eq!(sin_milli(750_000), -1000);
        assert!((sin_milli(125_000) - 707).abs() <= 2);
    }
}
