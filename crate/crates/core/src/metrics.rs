//! Graph and raster evaluation: GEO, iTOPO and soft F1.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::geom;
use crate::mapmatch::{build_index, EdgeIndex};
use crate::mask::BinaryMask;
use crate::model::{EdgeId, LocalPoint, NodeId, RoadGraph};
use crate::raster::RasterTile;
use crate::routing;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched_proposal: usize,
    pub total_proposal: usize,
    pub matched_gt: usize,
    pub total_gt: usize,
}

impl MetricReport {
    /// Both sides empty is a perfect score; one side empty scores zero.
    pub fn from_counts(matched_proposal: usize, total_proposal: usize, matched_gt: usize, total_gt: usize) -> Self {
        let (precision, recall) = match (total_proposal, total_gt) {
            (0, 0) => (1.0, 1.0),
            (0, _) | (_, 0) => (0.0, 0.0),
            (tp, tg) => (matched_proposal as f64 / tp as f64, matched_gt as f64 / tg as f64),
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            matched_proposal,
            total_proposal,
            matched_gt,
            total_gt,
        }
    }

    /// Precision and recall exchanged.
    pub fn swapped(&self) -> Self {
        Self::from_counts(self.matched_gt, self.total_gt, self.matched_proposal, self.total_proposal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoConfig {
    pub interpolation_interval: f64,
    pub match_radius: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            interpolation_interval: 11.0,
            match_radius: 6.0,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interpolation_interval > 0.0 && self.match_radius > 0.0) {
            return Err(Error::invalid("GEO interval and radius must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItopoConfig {
    pub geo: GeoConfig,
    pub node_match_radius: f64,
    pub traversal_radius: f64,
}

impl Default for ItopoConfig {
    fn default() -> Self {
        Self {
            geo: GeoConfig::default(),
            node_match_radius: 6.0,
            traversal_radius: 30.0,
        }
    }
}

impl ItopoConfig {
    pub fn validate(&self) -> Result<()> {
        self.geo.validate()?;
        if !(self.node_match_radius > 0.0 && self.traversal_radius > 0.0) {
            return Err(Error::invalid("iTOPO radii must be > 0"));
        }
        Ok(())
    }
}

/// Vertices at arc lengths 0, interval, 2*interval, ... and the final endpoint.
pub fn interpolate_line(line: &[LocalPoint], interval: f64) -> Vec<LocalPoint> {
    let len = geom::polyline_length(line);
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * interval;
        if s >= len - 1e-9 {
            break;
        }
        out.push(geom::point_at(line, s));
        k += 1;
    }
    out.push(geom::point_at(line, len));
    out
}

pub fn interpolate_vertices(graph: &RoadGraph, interval: f64) -> Result<Vec<(LocalPoint, EdgeId)>> {
    if !(interval > 0.0) {
        return Err(Error::invalid("interpolation interval must be > 0"));
    }
    Ok(graph
        .edges()
        .flat_map(|(id, e)| interpolate_line(&e.polyline, interval).into_iter().map(move |p| (p, id)))
        .collect())
}

/// Greedy one-to-one matching in ascending distance. Returns the number of
/// matched pairs.
pub fn greedy_match(proposal: &[LocalPoint], gt: &[LocalPoint], radius: f64) -> usize {
    if proposal.is_empty() || gt.is_empty() {
        return 0;
    }
    let cell = |p: &LocalPoint| ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, q) in gt.iter().enumerate() {
        grid.entry(cell(q)).or_default().push(j);
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in proposal.iter().enumerate() {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &j in grid.get(&(cx + dx, cy + dy)).map_or(&[][..], |v| v.as_slice()) {
                    let d = p.dist_xy(&gt[j]);
                    if d <= radius {
                        pairs.push((d, i, j));
                    }
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; proposal.len()];
    let mut used_g = vec![false; gt.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            matched += 1;
        }
    }
    matched
}

fn geo_counts(proposal: &[LocalPoint], gt: &[LocalPoint], config: &GeoConfig) -> MetricReport {
    let m = greedy_match(proposal, gt, config.match_radius);
    MetricReport::from_counts(m, proposal.len(), m, gt.len())
}

pub fn geo_metric(proposal: &RoadGraph, gt: &RoadGraph, config: &GeoConfig) -> Result<MetricReport> {
    config.validate()?;
    let pts = |g: &RoadGraph| -> Result<Vec<LocalPoint>> {
        Ok(interpolate_vertices(g, config.interpolation_interval)?.into_iter().map(|(p, _)| p).collect())
    };
    Ok(geo_counts(&pts(proposal)?, &pts(gt)?, config))
}

/// Where a ball traversal starts: a node, or a point at `offset` on an edge.
#[derive(Debug, Clone, Copy)]
enum Anchor {
    Node(NodeId),
    OnEdge(EdgeId, f64),
}

/// Polyline pieces of `graph` within `radius` of arc length from the anchor.
fn ball(graph: &RoadGraph, anchor: Anchor, radius: f64) -> Vec<Vec<LocalPoint>> {
    let seeds = match anchor {
        Anchor::Node(n) => vec![(n, 0.0)],
        Anchor::OnEdge(e, s) => {
            let edge = graph.edge(e).expect("anchor edge exists");
            vec![(edge.a, s), (edge.b, edge.length() - s)]
        }
    };
    let sp = routing::dijkstra(graph, &seeds, radius);
    let mut intervals: BTreeMap<EdgeId, Vec<(f64, f64)>> = BTreeMap::new();
    if let Anchor::OnEdge(e, s) = anchor {
        intervals.entry(e).or_default().push((s - radius, s + radius));
    }
    for (&n, &d) in &sp.dist {
        let reach = radius - d;
        for e in graph.incident_edges(n).unwrap_or_default() {
            let edge = graph.edge(e).unwrap();
            let len = edge.length();
            let list = intervals.entry(e).or_default();
            if edge.a == n {
                list.push((0.0, reach));
            }
            if edge.b == n {
                list.push((len - reach, len));
            }
        }
    }
    let mut pieces = Vec::new();
    for (e, mut list) in intervals {
        let edge = graph.edge(e).unwrap();
        let len = edge.length();
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in list {
            let (lo, hi) = (lo.max(0.0), hi.min(len));
            match merged.last_mut() {
                Some(last) if lo <= last.1 + 1e-9 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        for (lo, hi) in merged {
            if hi - lo > 1e-9 {
                pieces.push(geom::slice(&edge.polyline, lo, hi));
            }
        }
    }
    pieces
}

fn ball_vertices(graph: &RoadGraph, anchor: Anchor, radius: f64, interval: f64) -> Vec<LocalPoint> {
    ball(graph, anchor, radius)
        .iter()
        .flat_map(|piece| interpolate_line(piece, interval))
        .collect()
}

fn closest_edge(graph: &RoadGraph, index: Option<&EdgeIndex>, p: &LocalPoint, radius: f64) -> Option<Anchor> {
    let index = index?;
    let mut best: Option<(f64, EdgeId, f64)> = None;
    for e in index.edges_within(p, radius) {
        let proj = geom::project_onto_polyline(p, &graph.edge(e)?.polyline);
        if proj.distance <= radius && best.is_none_or(|(d, _, _)| proj.distance < d) {
            best = Some((proj.distance, e, proj.offset));
        }
    }
    best.map(|(_, e, s)| Anchor::OnEdge(e, s))
}

/// Per-node subgraph pairs `(own ball, other ball)` seen from `own`'s nodes.
fn side_pairs(own: &RoadGraph, other: &RoadGraph, other_index: Option<&EdgeIndex>, config: &ItopoConfig, par: Parallelism) -> Vec<(usize, usize, usize)> {
    let nodes: Vec<NodeId> = own.node_ids();
    exec::map(par, &nodes, |&v| {
        let interval = config.geo.interpolation_interval;
        let mine = ball_vertices(own, Anchor::Node(v), config.traversal_radius, interval);
        let p = own.node(v).unwrap();
        let theirs = closest_edge(other, other_index, p, config.node_match_radius)
            .map(|a| ball_vertices(other, a, config.traversal_radius, interval))
            .unwrap_or_default();
        let m = greedy_match(&mine, &theirs, config.geo.match_radius);
        (m, mine.len(), theirs.len())
    })
}

pub fn itopo_metric(proposal: &RoadGraph, gt: &RoadGraph, config: &ItopoConfig) -> Result<MetricReport> {
    itopo_metric_with(proposal, gt, config, Parallelism::default())
}

pub fn itopo_metric_with(proposal: &RoadGraph, gt: &RoadGraph, config: &ItopoConfig, par: Parallelism) -> Result<MetricReport> {
    config.validate()?;
    let p_index = build_index(proposal).ok();
    let g_index = build_index(gt).ok();
    let (mut mp, mut tp, mut mg, mut tg) = (0, 0, 0, 0);
    // proposal node v: (H_v, gt ball)
    for (m, own, other) in side_pairs(proposal, gt, g_index.as_ref(), config, par) {
        mp += m;
        tp += own;
        mg += m;
        tg += other;
    }
    // gt node: (proposal ball, H_gt)
    for (m, own, other) in side_pairs(gt, proposal, p_index.as_ref(), config, par) {
        mg += m;
        tg += own;
        mp += m;
        tp += other;
    }
    Ok(MetricReport::from_counts(mp, tp, mg, tg))
}

pub fn soft_f1(pred: &RasterTile, gt: &RasterTile) -> Result<MetricReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::invalid("soft F1 needs co-registered tiles"));
    }
    let dp = BinaryMask::from_tile(pred, 0.5).dilate_2x2();
    let dg = BinaryMask::from_tile(gt, 0.5).dilate_2x2();
    let both = dp.intersection_count(&dg);
    Ok(MetricReport::from_counts(both, dp.count(), both, dg.count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;
    use crate::raster::{Channel, TileSpec};

    fn road(pts: &[(f64, f64)]) -> RoadGraph {
        let mut g = RoadGraph::new();
        let ids: Vec<_> = pts.iter().map(|(x, y)| g.add_node(LocalPoint::xy(*x, *y))).collect();
        for w in ids.windows(2) {
            g.add_straight_edge(w[0], w[1], Provenance::GroundTruth).unwrap();
        }
        g
    }

    #[test]
    fn interpolation_counts() {
        assert_eq!(interpolate_vertices(&road(&[(0.0, 0.0), (22.0, 0.0)]), 11.0).unwrap().len(), 3);
        assert_eq!(interpolate_vertices(&road(&[(0.0, 0.0), (5.0, 0.0)]), 11.0).unwrap().len(), 2);
        assert!(interpolate_vertices(&RoadGraph::new(), 11.0).unwrap().is_empty());
    }

    #[test]
    fn geo_examples() {
        let cfg = GeoConfig::default();
        let gt = road(&[(0.0, 0.0), (1000.0, 0.0)]);
        let r = geo_metric(&gt, &gt, &cfg).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let shifted = road(&[(0.0, 3.0), (1000.0, 3.0)]);
        assert_eq!(geo_metric(&shifted, &gt, &cfg).unwrap().f1, 1.0);
        let half = road(&[(0.0, 0.0), (500.0, 0.0)]);
        let r = geo_metric(&half, &gt, &cfg).unwrap();
        assert_eq!(r.precision, 1.0);
        assert!((r.recall - 0.5).abs() < 0.02);
        let e = geo_metric(&RoadGraph::new(), &RoadGraph::new(), &cfg).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        assert_eq!(geo_metric(&RoadGraph::new(), &gt, &cfg).unwrap().f1, 0.0);
    }

    #[test]
    fn itopo_penalizes_false_junction() {
        let cfg = ItopoConfig::default();
        let mut gt = road(&[(-990.0, 0.0), (990.0, 0.0)]);
        let a = gt.add_node(LocalPoint::xy(0.0, -990.0));
        let b = gt.add_node(LocalPoint::xy(0.0, 990.0));
        gt.add_straight_edge(a, b, Provenance::GroundTruth).unwrap();
        let same = itopo_metric(&gt, &gt, &cfg).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));

        let mut joined = RoadGraph::new();
        let c = joined.add_node(LocalPoint::xy(0.0, 0.0));
        for (x, y) in [(-990.0, 0.0), (990.0, 0.0), (0.0, -990.0), (0.0, 990.0)] {
            let n = joined.add_node(LocalPoint::xy(x, y));
            joined.add_straight_edge(c, n, Provenance::Segmentation).unwrap();
        }
        let it = itopo_metric(&joined, &gt, &cfg).unwrap();
        let geo_gt = geo_metric(&joined, &gt, &cfg.geo).unwrap();
        assert!(it.precision < 1.0, "{it:?}");
        assert!((geo_gt.f1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn soft_f1_single_pixel() {
        let spec = TileSpec::new(0.0, 0.0, 1.0, 10, 10).unwrap();
        let mut gt = RasterTile::zeros(spec, Channel::Label);
        let mut pred = gt.clone();
        gt.set(5, 5, 1.0);
        pred.set(6, 6, 1.0);
        let r = soft_f1(&pred, &gt).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.25, 0.25, 0.25));
        assert_eq!(soft_f1(&gt, &gt).unwrap().f1, 1.0);
        let empty = RasterTile::zeros(spec, Channel::Label);
        assert_eq!(soft_f1(&empty, &gt).unwrap().f1, 0.0);
    }
}
