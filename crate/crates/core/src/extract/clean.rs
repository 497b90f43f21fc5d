//! Rule-based graph cleaning: junction collapsing, dead-end pruning and
//! degree-2 node elimination. Each operation iterates to a fixpoint and
//! returns a new graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::model::{EdgeId, Provenance, RoadGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningConfig {
    /// Dead ends shorter than this are pruned (meters).
    pub min_dead_end_len: f64,
    /// Edges between two junctions shorter than this are contracted (meters).
    pub collapse_edge_len: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_dead_end_len: 15.0,
            collapse_edge_len: 10.0,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_dead_end_len >= 0.0 && self.collapse_edge_len >= 0.0) {
            return Err(Error::invalid("cleaning thresholds must be >= 0"));
        }
        Ok(())
    }
}

fn shortest_matching(graph: &RoadGraph, pred: impl Fn(EdgeId, f64) -> bool) -> Option<EdgeId> {
    graph
        .edges()
        .map(|(id, e)| (id, e.length()))
        .filter(|(id, len)| pred(*id, *len))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Contracts short edges joining two junctions (degree >= 3) into a single
/// node at the edge's arc-length midpoint, shortest first.
pub fn collapse_short_junction_edges(graph: &RoadGraph, config: &CleaningConfig) -> Result<RoadGraph> {
    config.validate()?;
    let mut g = graph.clone();
    while let Some(eid) = shortest_matching(&g, |id, len| {
        let e = g.edge(id).unwrap();
        len < config.collapse_edge_len && g.degree(e.a) >= 3 && g.degree(e.b) >= 3
    }) {
        let edge = g.remove_edge(eid).unwrap();
        if edge.is_self_loop() {
            continue;
        }
        let mid = geom::point_at(&edge.polyline, edge.length() / 2.0);
        let (keep, drop) = (edge.a, edge.b);
        g.move_node(keep, mid)?;
        for e in g.incident_edges(drop)? {
            g.reattach(e, drop, keep)?;
        }
        g.remove_node(drop);
        for e in g.incident_edges(keep)? {
            if g.edge_length(e)? <= 0.0 {
                g.remove_edge(e);
            }
        }
    }
    Ok(g)
}

/// Removes short spurs: edges with one dead-end endpoint whose other endpoint
/// is a junction. Isolated segments are left alone.
pub fn prune_dead_ends(graph: &RoadGraph, config: &CleaningConfig) -> Result<RoadGraph> {
    config.validate()?;
    let mut g = graph.clone();
    while let Some(eid) = shortest_matching(&g, |id, len| {
        let e = g.edge(id).unwrap();
        if e.is_self_loop() || len >= config.min_dead_end_len {
            return false;
        }
        let (da, db) = (g.degree(e.a), g.degree(e.b));
        (da == 1 && db >= 3) || (db == 1 && da >= 3)
    }) {
        let edge = g.remove_edge(eid).unwrap();
        let tip = if g.degree(edge.a) == 0 { edge.a } else { edge.b };
        g.remove_node(tip);
    }
    Ok(g)
}

fn merged_provenance(a: Provenance, b: Provenance) -> Provenance {
    match (a, b) {
        (Provenance::GapFill, _) | (_, Provenance::GapFill) => Provenance::GapFill,
        (Provenance::GroundTruth, Provenance::GroundTruth) => Provenance::GroundTruth,
        _ => Provenance::Segmentation,
    }
}

/// Eliminates every node with exactly two distinct incident edges by
/// concatenating their geometry. Self-loop anchors stay.
pub fn simplify_degree2(graph: &RoadGraph) -> Result<RoadGraph> {
    let mut g = graph.clone();
    loop {
        let target = g.node_ids().into_iter().find(|&n| {
            g.degree(n) == 2 && g.incident_edges(n).map(|v| v.len() == 2).unwrap_or(false)
        });
        let Some(v) = target else { break };
        let inc = g.incident_edges(v)?;
        let e1 = g.remove_edge(inc[0]).unwrap();
        let e2 = g.remove_edge(inc[1]).unwrap();
        let (u, w) = (e1.other(v), e2.other(v));
        let mut line = e1.polyline_from(u);
        line.extend(e2.polyline_from(v).into_iter().skip(1));
        g.remove_node(v);
        g.add_edge(u, w, line, merged_provenance(e1.provenance, e2.provenance))?;
    }
    Ok(g)
}
