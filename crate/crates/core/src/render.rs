//! Deterministic SVG rendering of graphs over an optional raster backdrop.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io;
use crate::model::{LocalPoint, Provenance, RoadGraph};
use crate::raster::RasterTile;

/// How one graph layer is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer<'a> {
    pub graph: &'a RoadGraph,
    /// Overlays (e.g. ground truth) are drawn thin and translucent.
    pub overlay: bool,
}

fn edge_color(p: Provenance, overlay: bool) -> &'static str {
    match (overlay, p) {
        (true, _) => "#2ca02c",
        (false, Provenance::GapFill) => "#d62728",
        (false, Provenance::GroundTruth) => "#7f7f7f",
        (false, Provenance::Segmentation) => "#1f77b4",
    }
}

pub fn render_svg(layers: &[Layer<'_>], backdrop: Option<&RasterTile>) -> String {
    let mut pts: Vec<LocalPoint> = layers
        .iter()
        .flat_map(|l| l.graph.edges().flat_map(|(_, e)| e.polyline.iter().copied()).chain(l.graph.nodes().map(|(_, p)| *p)))
        .collect();
    if let Some(t) = backdrop {
        let s = &t.spec;
        pts.push(LocalPoint::xy(s.origin_x, s.origin_y));
        pts.push(LocalPoint::xy(s.origin_x + s.width_m(), s.origin_y + s.height_m()));
    }
    let (min, max) = crate::model::bbox_of(&pts).unwrap_or((LocalPoint::xy(0.0, 0.0), LocalPoint::xy(1.0, 1.0)));
    let pad = 10.0;
    let (x0, y1) = (min.x - pad, max.y + pad);
    let (w, h) = ((max.x - min.x) + 2.0 * pad, (max.y - min.y) + 2.0 * pad);
    // svg y grows downwards
    let tx = |p: &LocalPoint| format!("{:.3},{:.3}", p.x - x0, y1 - p.y);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.3} {h:.3}" width="{w:.0}" height="{h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w:.3}" height="{h:.3}" fill="white"/>"#);
    if let Some(t) = backdrop {
        let max_v = t.max();
        let r = t.spec.resolution;
        let _ = writeln!(out, r##"<g fill="#000000">"##);
        for iy in 0..t.height() {
            for ix in 0..t.width() {
                let v = t.get(ix, iy);
                if v > 0.0 {
                    let px = t.spec.origin_x + ix as f64 * r - x0;
                    let py = y1 - (t.spec.origin_y + (iy + 1) as f64 * r);
                    let _ = writeln!(
                        out,
                        r#"<rect x="{px:.3}" y="{py:.3}" width="{r:.3}" height="{r:.3}" fill-opacity="{:.3}"/>"#,
                        0.15 + 0.35 * v / max_v
                    );
                }
            }
        }
        let _ = writeln!(out, "</g>");
    }
    for layer in layers {
        let (width, opacity) = if layer.overlay { (1.5, 0.6) } else { (2.5, 1.0) };
        let _ = writeln!(out, r#"<g fill="none" stroke-width="{width}" stroke-opacity="{opacity}">"#);
        for (id, e) in layer.graph.edges() {
            let coords: Vec<String> = e.polyline.iter().map(tx).collect();
            let _ = writeln!(
                out,
                r#"<polyline id="{}{id}" stroke="{}" points="{}"/>"#,
                if layer.overlay { "ref-" } else { "" },
                edge_color(e.provenance, layer.overlay),
                coords.join(" ")
            );
        }
        let _ = writeln!(out, "</g>");
        if !layer.overlay {
            let _ = writeln!(out, r##"<g fill="#ff7f0e">"##);
            for (id, p) in layer.graph.nodes() {
                let xy = tx(p);
                let (cx, cy) = xy.split_once(',').unwrap();
                let radius = 1.5 + layer.graph.degree(id) as f64;
                let _ = writeln!(out, r#"<circle id="{id}" cx="{cx}" cy="{cy}" r="{radius:.1}"/>"#);
            }
            let _ = writeln!(out, "</g>");
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, layers: &[Layer<'_>], backdrop: Option<&RasterTile>) -> Result<()> {
    io::write_bytes(path, render_svg(layers, backdrop).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_ground_truth, ScenarioKind, ScenarioSpec};

    #[test]
    fn grid_has_twelve_polylines() {
        let g = make_ground_truth(&ScenarioSpec::new(ScenarioKind::Grid), 0).unwrap();
        let svg = render_svg(&[Layer { graph: &g, overlay: false }], None);
        assert_eq!(svg.matches("<polyline").count(), 12);
        assert_eq!(svg, render_svg(&[Layer { graph: &g, overlay: false }], None));
    }

    #[test]
    fn empty_graph_is_valid_svg() {
        let g = RoadGraph::new();
        let svg = render_svg(&[Layer { graph: &g, overlay: false }], None);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 0);
    }
}
