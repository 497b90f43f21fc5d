//! Domain types shared by every stage: the local metric frame, fleet sensor
//! data and the undirected road graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;

/// WGS84 equatorial radius in meters.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Polyline endpoints must sit on their nodes within this distance.
pub const ENDPOINT_TOLERANCE: f64 = 1e-6;

/// Maximum spacing between consecutive trace fixes accepted at ingest.
pub const MAX_TRACE_STEP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl LocalFrame {
    pub fn new(origin_lat: f64, origin_lon: f64) -> Result<Self> {
        if !origin_lat.is_finite() || !origin_lon.is_finite() {
            return Err(Error::invalid("frame origin must be finite"));
        }
        if origin_lat.abs() > 90.0 || origin_lon.abs() > 180.0 {
            return Err(Error::invalid(format!(
                "frame origin ({origin_lat}, {origin_lon}) out of range"
            )));
        }
        Ok(Self {
            origin_lat,
            origin_lon,
        })
    }

    pub fn earth_radius(&self) -> f64 {
        EARTH_RADIUS
    }

    /// Equirectangular tangent-plane projection around the frame origin.
    pub fn project_to_local(&self, lat: f64, lon: f64, alt: f64) -> Result<LocalPoint> {
        if !(lat.is_finite() && lon.is_finite() && alt.is_finite()) {
            return Err(Error::invalid("non-finite geographic coordinate"));
        }
        if lat.abs() > 90.0 {
            return Err(Error::invalid(format!("latitude {lat} out of range")));
        }
        let lat0 = self.origin_lat.to_radians();
        let x = EARTH_RADIUS * lat0.cos() * (lon - self.origin_lon).to_radians();
        let y = EARTH_RADIUS * (lat - self.origin_lat).to_radians();
        Ok(LocalPoint::new(x, y, alt))
    }

    /// Inverse of [`LocalFrame::project_to_local`].
    pub fn unproject(&self, p: &LocalPoint) -> (f64, f64, f64) {
        let lat0 = self.origin_lat.to_radians();
        let lat = self.origin_lat + (p.y / EARTH_RADIUS).to_degrees();
        let lon = self.origin_lon + (p.x / (EARTH_RADIUS * lat0.cos())).to_degrees();
        (lat, lon, p.z)
    }
}

impl Default for LocalFrame {
    fn default() -> Self {
        Self {
            origin_lat: 0.0,
            origin_lon: 0.0,
        }
    }
}

/// Free function form of [`LocalFrame::project_to_local`].
pub fn project_to_local(lat: f64, lon: f64, alt: f64, frame: &LocalFrame) -> Result<LocalPoint> {
    frame.project_to_local(lat, lon, alt)
}

/// Meters east (x), north (y) and up (z) of the frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl LocalPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn xy(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dist_xy(&self, other: &LocalPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &LocalPoint, t: f64) -> LocalPoint {
        LocalPoint::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )
    }
}

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(NodeId, "n");
id_type!(EdgeId, "e");
id_type!(TraceId, "t");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssTrace {
    pub id: TraceId,
    /// Fixes in travel order.
    pub points: Vec<LocalPoint>,
}

impl GnssTrace {
    pub fn new(id: TraceId, points: Vec<LocalPoint>) -> Result<Self> {
        let trace = Self { id, points };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid(format!(
                "trace {} has {} point(s); at least 2 required",
                self.id,
                self.points.len()
            )));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("trace {} point {i} is not finite", self.id)));
        }
        for (i, w) in self.points.windows(2).enumerate() {
            let step = w[0].dist_xy(&w[1]);
            if step > MAX_TRACE_STEP {
                return Err(Error::invalid(format!(
                    "trace {} points {i}..{} are {step:.1} m apart (max {MAX_TRACE_STEP} m)",
                    self.id,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticClass {
    LaneMarking,
    RoadBoundary,
}

impl SemanticClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SemanticClass::LaneMarking => "lane_marking",
            SemanticClass::RoadBoundary => "road_boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lane_marking" | "LaneMarking" => Some(SemanticClass::LaneMarking),
            "road_boundary" | "RoadBoundary" => Some(SemanticClass::RoadBoundary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticPoint {
    pub position: LocalPoint,
    pub class: SemanticClass,
}

/// Aligned traces and semantic points in one local frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FleetDataset {
    pub frame: LocalFrame,
    pub traces: Vec<GnssTrace>,
    pub points: Vec<SemanticPoint>,
}

impl FleetDataset {
    /// XY bounding box of all traces and points.
    pub fn bbox(&self) -> Option<(LocalPoint, LocalPoint)> {
        bbox_of(
            self.traces
                .iter()
                .flat_map(|t| t.points.iter())
                .chain(self.points.iter().map(|p| &p.position)),
        )
    }
}

pub fn bbox_of<'a>(points: impl IntoIterator<Item = &'a LocalPoint>) -> Option<(LocalPoint, LocalPoint)> {
    let mut it = points.into_iter();
    let first = it.next()?;
    let (mut lo, mut hi) = (*first, *first);
    for p in it {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    lo.z = 0.0;
    hi.z = 0.0;
    Some((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Segmentation,
    GapFill,
    GroundTruth,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Segmentation => "segmentation",
            Provenance::GapFill => "gap_fill",
            Provenance::GroundTruth => "ground_truth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "segmentation" | "Segmentation" => Some(Provenance::Segmentation),
            "gap_fill" | "GapFill" => Some(Provenance::GapFill),
            "ground_truth" | "GroundTruth" => Some(Provenance::GroundTruth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    /// Geometry from `a` to `b`.
    pub polyline: Vec<LocalPoint>,
    pub provenance: Provenance,
}

impl Edge {
    pub fn length(&self) -> f64 {
        geom::polyline_length(&self.polyline)
    }

    pub fn is_self_loop(&self) -> bool {
        self.a == self.b
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.a == node || self.b == node
    }

    /// The endpoint opposite `node`. For self-loops this is `node` itself.
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }

    /// Polyline oriented so that it starts at `node`.
    pub fn polyline_from(&self, node: NodeId) -> Vec<LocalPoint> {
        if self.a == node {
            self.polyline.clone()
        } else {
            self.polyline.iter().rev().copied().collect()
        }
    }
}

/// Undirected road graph. Nodes are intersections and dead ends; edges carry
/// centerline geometry.
#[derive(Debug, Clone, Default)]
pub struct RoadGraph {
    nodes: BTreeMap<NodeId, LocalPoint>,
    edges: BTreeMap<EdgeId, Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<EdgeId>>,
    next_node: u64,
    next_edge: u64,
}

impl PartialEq for RoadGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl RoadGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &LocalPoint)> + '_ {
        self.nodes.iter().map(|(id, p)| (*id, p))
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> + '_ {
        self.edges.iter().map(|(id, e)| (*id, e))
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn edge_ids(&self) -> Vec<EdgeId> {
        self.edges.keys().copied().collect()
    }

    pub fn node(&self, id: NodeId) -> Option<&LocalPoint> {
        self.nodes.get(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn add_node(&mut self, p: LocalPoint) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(id, p);
        self.adjacency.insert(id, BTreeSet::new());
        id
    }

    /// Inserts a node with a caller-chosen id (used by deserializers).
    pub fn insert_node(&mut self, id: NodeId, p: LocalPoint) -> Result<()> {
        if self.nodes.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate node id {id}")));
        }
        self.nodes.insert(id, p);
        self.adjacency.insert(id, BTreeSet::new());
        self.next_node = self.next_node.max(id.0 + 1);
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        a: NodeId,
        b: NodeId,
        polyline: Vec<LocalPoint>,
        provenance: Provenance,
    ) -> Result<EdgeId> {
        let id = EdgeId(self.next_edge);
        self.insert_edge(id, a, b, polyline, provenance)?;
        Ok(id)
    }

    pub fn insert_edge(
        &mut self,
        id: EdgeId,
        a: NodeId,
        b: NodeId,
        polyline: Vec<LocalPoint>,
        provenance: Provenance,
    ) -> Result<()> {
        if self.edges.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate edge id {id}")));
        }
        let edge = Edge {
            a,
            b,
            polyline,
            provenance,
        };
        self.check_edge(id, &edge)?;
        self.adjacency.get_mut(&a).unwrap().insert(id);
        self.adjacency.get_mut(&b).unwrap().insert(id);
        self.edges.insert(id, edge);
        self.next_edge = self.next_edge.max(id.0 + 1);
        Ok(())
    }

    /// Adds a straight edge between two existing nodes.
    pub fn add_straight_edge(&mut self, a: NodeId, b: NodeId, provenance: Provenance) -> Result<EdgeId> {
        let pa = *self.node(a).ok_or_else(|| Error::not_found(format!("node {a}")))?;
        let pb = *self.node(b).ok_or_else(|| Error::not_found(format!("node {b}")))?;
        self.add_edge(a, b, vec![pa, pb], provenance)
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Option<Edge> {
        let edge = self.edges.remove(&id)?;
        for n in [edge.a, edge.b] {
            if let Some(adj) = self.adjacency.get_mut(&n) {
                adj.remove(&id);
            }
        }
        Some(edge)
    }

    /// Removes a node together with all its incident edges.
    pub fn remove_node(&mut self, id: NodeId) -> Option<LocalPoint> {
        let incident: Vec<EdgeId> = self.adjacency.get(&id)?.iter().copied().collect();
        for e in incident {
            self.remove_edge(e);
        }
        self.adjacency.remove(&id);
        self.nodes.remove(&id)
    }

    /// Drops every node without incident edges.
    pub fn remove_isolated_nodes(&mut self) {
        let isolated: Vec<NodeId> = self
            .adjacency
            .iter()
            .filter(|(_, adj)| adj.is_empty())
            .map(|(n, _)| *n)
            .collect();
        for n in isolated {
            self.remove_node(n);
        }
    }

    /// Moves a node and re-anchors the matching endpoint of every incident polyline.
    pub fn move_node(&mut self, id: NodeId, p: LocalPoint) -> Result<()> {
        let slot = self
            .nodes
            .get_mut(&id)
            .ok_or_else(|| Error::not_found(format!("node {id}")))?;
        *slot = p;
        let incident: Vec<EdgeId> = self.adjacency[&id].iter().copied().collect();
        for e in incident {
            let edge = self.edges.get_mut(&e).unwrap();
            if edge.a == id {
                edge.polyline[0] = p;
            }
            if edge.b == id {
                *edge.polyline.last_mut().unwrap() = p;
            }
        }
        Ok(())
    }

    /// Reconnects the `from` end(s) of edge `e` to node `to`, re-anchoring geometry.
    pub fn reattach(&mut self, e: EdgeId, from: NodeId, to: NodeId) -> Result<()> {
        let target = *self
            .nodes
            .get(&to)
            .ok_or_else(|| Error::not_found(format!("node {to}")))?;
        let edge = self
            .edges
            .get_mut(&e)
            .ok_or_else(|| Error::not_found(format!("edge {e}")))?;
        if !edge.touches(from) {
            return Err(Error::invalid(format!("edge {e} does not touch node {from}")));
        }
        if edge.a == from {
            edge.a = to;
            edge.polyline[0] = target;
        }
        if edge.b == from {
            edge.b = to;
            *edge.polyline.last_mut().unwrap() = target;
        }
        let still_touches = edge.touches(from);
        if !still_touches {
            self.adjacency.get_mut(&from).unwrap().remove(&e);
        }
        self.adjacency.get_mut(&to).unwrap().insert(e);
        Ok(())
    }

    /// Edges having `node` as an endpoint; self-loops appear once.
    pub fn incident_edges(&self, node: NodeId) -> Result<Vec<EdgeId>> {
        self.adjacency
            .get(&node)
            .map(|s| s.iter().copied().collect())
            .ok_or_else(|| Error::not_found(format!("node {node}")))
    }

    /// Number of edge endpoints at `node`; a self-loop counts twice.
    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency.get(&node).map_or(0, |adj| {
            adj.iter()
                .map(|e| if self.edges[e].is_self_loop() { 2 } else { 1 })
                .sum()
        })
    }

    pub fn edge_length(&self, edge: EdgeId) -> Result<f64> {
        self.edges
            .get(&edge)
            .map(Edge::length)
            .ok_or_else(|| Error::not_found(format!("edge {edge}")))
    }

    pub fn total_length(&self) -> f64 {
        self.edges.values().map(Edge::length).sum()
    }

    pub fn bbox(&self) -> Option<(LocalPoint, LocalPoint)> {
        bbox_of(
            self.nodes
                .values()
                .chain(self.edges.values().flat_map(|e| e.polyline.iter())),
        )
    }

    /// Node ids reachable from `start` (including `start`).
    pub fn component_of(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            if let Some(adj) = self.adjacency.get(&n) {
                for e in adj {
                    stack.push(self.edges[e].other(n));
                }
            }
        }
        seen
    }

    pub fn connected_components(&self) -> Vec<BTreeSet<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &n in self.nodes.keys() {
            if seen.contains(&n) {
                continue;
            }
            let comp = self.component_of(n);
            seen.extend(comp.iter().copied());
            out.push(comp);
        }
        out
    }

    fn check_edge(&self, id: EdgeId, edge: &Edge) -> Result<()> {
        let pa = self
            .nodes
            .get(&edge.a)
            .ok_or_else(|| Error::not_found(format!("edge {id} references missing node {}", edge.a)))?;
        let pb = self
            .nodes
            .get(&edge.b)
            .ok_or_else(|| Error::not_found(format!("edge {id} references missing node {}", edge.b)))?;
        if edge.polyline.len() < 2 {
            return Err(Error::invalid(format!("edge {id} polyline has fewer than 2 points")));
        }
        if edge.polyline.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("edge {id} has non-finite geometry")));
        }
        let first = edge.polyline[0];
        let last = *edge.polyline.last().unwrap();
        if first.dist_xy(pa) > ENDPOINT_TOLERANCE || last.dist_xy(pb) > ENDPOINT_TOLERANCE {
            return Err(Error::invalid(format!(
                "edge {id} polyline endpoints do not coincide with nodes {} / {}",
                edge.a, edge.b
            )));
        }
        if edge.length() <= 0.0 {
            return Err(Error::invalid(format!("edge {id} has zero length")));
        }
        Ok(())
    }

    /// Checks every structural invariant: referential integrity, endpoint
    /// coincidence, non-zero edge length and adjacency consistency.
    pub fn validate(&self) -> Result<()> {
        for (id, edge) in &self.edges {
            self.check_edge(*id, edge)
                .map_err(|e| Error::Invariant(e.to_string()))?;
            for n in [edge.a, edge.b] {
                if !self.adjacency.get(&n).is_some_and(|adj| adj.contains(id)) {
                    return Err(Error::Invariant(format!("adjacency of {n} misses edge {id}")));
                }
            }
        }
        for (n, adj) in &self.adjacency {
            if !self.nodes.contains_key(n) {
                return Err(Error::Invariant(format!("adjacency for unknown node {n}")));
            }
            for e in adj {
                if !self.edges.get(e).is_some_and(|edge| edge.touches(*n)) {
                    return Err(Error::Invariant(format!("stale adjacency {n} -> {e}")));
                }
            }
        }
        if self.adjacency.len() != self.nodes.len() {
            return Err(Error::Invariant("adjacency/node count mismatch".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plus() -> (RoadGraph, NodeId) {
        let mut g = RoadGraph::new();
        let c = g.add_node(LocalPoint::xy(0.0, 0.0));
        for (x, y) in [(10.0, 0.0), (-10.0, 0.0), (0.0, 10.0), (0.0, -10.0)] {
            let n = g.add_node(LocalPoint::xy(x, y));
            g.add_straight_edge(c, n, Provenance::Segmentation).unwrap();
        }
        (g, c)
    }

    #[test]
    fn projection_examples() {
        let frame = LocalFrame::new(0.0, 0.0).unwrap();
        let p = frame.project_to_local(0.0, 0.0, 12.5).unwrap();
        assert_eq!(p, LocalPoint::new(0.0, 0.0, 12.5));

        let p = frame.project_to_local(0.0, 0.001, 0.0).unwrap();
        let expected = EARTH_RADIUS * 0.001f64.to_radians();
        assert!((p.x - expected).abs() < 1e-9);
        assert!((p.x - 111.319).abs() < 1e-3);
        assert_eq!(p.y, 0.0);

        assert!(frame.project_to_local(91.0, 0.0, 0.0).is_err());
        assert!(frame.project_to_local(f64::NAN, 0.0, 0.0).is_err());
        assert!(LocalFrame::new(95.0, 0.0).is_err());
    }

    #[test]
    fn projection_round_trip() {
        let frame = LocalFrame::new(37.77, -122.42).unwrap();
        let p = frame.project_to_local(37.78, -122.41, 3.0).unwrap();
        let (lat, lon, alt) = frame.unproject(&p);
        assert!((lat - 37.78).abs() < 1e-12 && (lon + 122.41).abs() < 1e-12 && alt == 3.0);
    }

    #[test]
    fn incident_edges_examples() {
        let (mut g, c) = plus();
        assert_eq!(g.incident_edges(c).unwrap().len(), 4);
        let iso = g.add_node(LocalPoint::xy(50.0, 50.0));
        assert!(g.incident_edges(iso).unwrap().is_empty());
        assert!(matches!(g.incident_edges(NodeId(999)), Err(Error::NotFound(_))));
        let degree_sum: usize = g.node_ids().iter().map(|n| g.degree(*n)).sum();
        assert_eq!(degree_sum, 2 * g.edge_count());
    }

    #[test]
    fn self_loop_listed_once_counted_twice() {
        let mut g = RoadGraph::new();
        let a = g.add_node(LocalPoint::xy(0.0, 0.0));
        let e = g
            .add_edge(
                a,
                a,
                vec![LocalPoint::xy(0.0, 0.0), LocalPoint::xy(5.0, 5.0), LocalPoint::xy(0.0, 0.0)],
                Provenance::Segmentation,
            )
            .unwrap();
        assert_eq!(g.incident_edges(a).unwrap(), vec![e]);
        assert_eq!(g.degree(a), 2);
    }

    #[test]
    fn edge_length_examples() {
        let mut g = RoadGraph::new();
        let a = g.add_node(LocalPoint::xy(0.0, 0.0));
        let b = g.add_node(LocalPoint::xy(3.0, 4.0));
        let c = g.add_node(LocalPoint::xy(1.0, 1.0));
        let e1 = g.add_straight_edge(a, b, Provenance::GroundTruth).unwrap();
        let e2 = g
            .add_edge(
                a,
                c,
                vec![LocalPoint::xy(0.0, 0.0), LocalPoint::xy(1.0, 0.0), LocalPoint::xy(1.0, 1.0)],
                Provenance::GroundTruth,
            )
            .unwrap();
        assert_eq!(g.edge_length(e1).unwrap(), 5.0);
        assert_eq!(g.edge_length(e2).unwrap(), 2.0);
        assert!(matches!(g.edge_length(EdgeId(77)), Err(Error::NotFound(_))));
    }

    #[test]
    fn rejects_bad_edges() {
        let mut g = RoadGraph::new();
        let a = g.add_node(LocalPoint::xy(0.0, 0.0));
        let b = g.add_node(LocalPoint::xy(1.0, 0.0));
        assert!(g.add_edge(a, NodeId(9), vec![], Provenance::GapFill).is_err());
        assert!(g
            .add_edge(a, b, vec![LocalPoint::xy(0.0, 0.0), LocalPoint::xy(2.0, 0.0)], Provenance::GapFill)
            .is_err());
        let c = g.add_node(LocalPoint::xy(0.0, 0.0));
        assert!(g.add_straight_edge(a, c, Provenance::GapFill).is_err());
    }

    #[test]
    fn reattach_and_move_keep_invariants() {
        let (mut g, c) = plus();
        let extra = g.add_node(LocalPoint::xy(1.0, 1.0));
        let e = g.incident_edges(c).unwrap()[0];
        g.reattach(e, c, extra).unwrap();
        g.validate().unwrap();
        assert_eq!(g.degree(c), 3);
        g.move_node(c, LocalPoint::xy(0.5, -0.5)).unwrap();
        g.validate().unwrap();
        g.remove_node(c);
        g.validate().unwrap();
        assert_eq!(g.edge_count(), 1);
    }
}
