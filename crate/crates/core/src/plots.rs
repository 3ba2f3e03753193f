//! Minimal SVG renderings of decision grids and similarity matrices.

use std::fmt::Write;

use crate::data::Dataset;
use crate::eval::{DecisionGrid, SimilarityMatrix};

const SIZE: f64 = 600.0;
const CLASS_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn color(class: usize) -> &'static str {
    CLASS_COLORS[class % CLASS_COLORS.len()]
}

/// Grid cells tinted by predicted class, the class boundary traced along
/// cell edges, training samples as dots and labeled samples as crosses.
pub fn boundary_svg(grid: &DecisionGrid, train: &Dataset) -> String {
    let res = grid.resolution;
    let (x0, y0) = (grid.points.get(0, 0), grid.points.get(0, 1));
    let last = grid.points.rows() - 1;
    let (x1, y1) = (grid.points.get(last, 0), grid.points.get(last, 1));
    let (w, h) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
    let px = |x: f64| (x - x0) / w * SIZE;
    let py = |y: f64| SIZE - (y - y0) / h * SIZE;
    let cell = SIZE / res as f64;
    let class = grid.probs.argmax_rows();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="{} {} {} {}">"#,
        -cell / 2.0,
        -cell / 2.0,
        SIZE + cell,
        SIZE + cell
    );
    for (k, &c) in class.iter().enumerate() {
        let (cx, cy) = (px(grid.points.get(k, 0)), py(grid.points.get(k, 1)));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}" fill-opacity="0.18"/>"#,
            cx - cell / 2.0,
            cy - cell / 2.0,
            color(c)
        );
    }
    let _ = write!(s, r#"<path stroke="black" stroke-width="1.5" fill="none" d=""#);
    for iy in 0..res {
        for ix in 0..res {
            let k = iy * res + ix;
            let (cx, cy) = (px(grid.points.get(k, 0)), py(grid.points.get(k, 1)));
            if ix + 1 < res && class[k] != class[k + 1] {
                let ex = cx + cell / 2.0;
                let _ = write!(s, "M{ex:.2} {:.2}V{:.2}", cy - cell / 2.0, cy + cell / 2.0);
            }
            if iy + 1 < res && class[k] != class[k + res] {
                let ey = cy - cell / 2.0;
                let _ = write!(s, "M{:.2} {ey:.2}H{:.2}", cx - cell / 2.0, cx + cell / 2.0);
            }
        }
    }
    let _ = writeln!(s, r#""/>"#);
    let stride = (train.len() / 1500).max(1);
    for i in (0..train.len()).step_by(stride) {
        let r = train.features.row(i);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
            px(r[0]),
            py(r[1]),
            color(train.labels[i])
        );
    }
    for &i in &train.labeled {
        let r = train.features.row(i);
        let (cx, cy) = (px(r[0]), py(r[1]));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="black" stroke-width="2.5"/>"#,
            cx - 6.0,
            cy - 6.0,
            cx + 6.0,
            cy + 6.0,
            cx - 6.0,
            cy + 6.0,
            cx + 6.0,
            cy - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One grey-scale cell per matrix entry, darker for higher similarity.
pub fn heatmap_svg(m: &SimilarityMatrix) -> String {
    let n = m.size();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {n} {n}" shape-rendering="crispEdges" data-size="{n}">"#
    );
    for i in 0..n {
        for j in 0..n {
            let v = m.values.get(i, j).clamp(0.0, 1.0);
            let g = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(s, r#"<rect x="{j}" y="{i}" width="1" height="1" fill="rgb({g},{g},{g})"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}
