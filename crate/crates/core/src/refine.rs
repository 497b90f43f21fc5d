//! Graph refinement: gap filling, support-based pruning of gap edges and
//! splitting of intersections that traces never turn through.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::extract::clean::{prune_dead_ends, simplify_degree2, CleaningConfig};
use crate::geom;
use crate::mapmatch::{self, MatchConfig, Matcher};
use crate::model::{EdgeId, GnssTrace, LocalPoint, NodeId, Provenance, RoadGraph};

/// Length over which a dead end's arrival direction is estimated.
pub const TERMINAL_WINDOW: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapFillConfig {
    pub max_gap_len: f64,
    pub max_turn_deg: f64,
    /// Defaults to `max_gap_len` when absent.
    pub extension_probe_len: Option<f64>,
}

impl Default for GapFillConfig {
    fn default() -> Self {
        Self {
            max_gap_len: 30.0,
            max_turn_deg: 90.0,
            extension_probe_len: None,
        }
    }
}

impl GapFillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_gap_len > 0.0) || !(self.max_turn_deg > 0.0 && self.max_turn_deg <= 180.0) {
            return Err(Error::invalid("gap fill needs max_gap_len > 0 and max_turn_deg in (0, 180]"));
        }
        if self.probe_len() <= 0.0 {
            return Err(Error::invalid("extension_probe_len must be > 0"));
        }
        Ok(())
    }

    pub fn probe_len(&self) -> f64 {
        self.extension_probe_len.unwrap_or(self.max_gap_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisambiguationConfig {
    pub min_transition_support: usize,
}

impl Default for DisambiguationConfig {
    fn default() -> Self {
        Self { min_transition_support: 4 }
    }
}

impl DisambiguationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_transition_support == 0 {
            return Err(Error::invalid("min_transition_support must be >= 1"));
        }
        Ok(())
    }
}

fn dead_ends(g: &RoadGraph) -> Vec<NodeId> {
    g.node_ids().into_iter().filter(|n| g.degree(*n) == 1).collect()
}

/// The single edge at a dead end and the direction of arrival at it.
fn arrival(g: &RoadGraph, v: NodeId) -> Option<(EdgeId, NodeId, (f64, f64))> {
    let e = *g.incident_edges(v).ok()?.first()?;
    let edge = g.edge(e)?;
    let dir = geom::terminal_direction(&edge.polyline_from(edge.other(v)), TERMINAL_WINDOW)?;
    Some((e, edge.other(v), dir))
}

struct RayHit {
    t: f64,
    edge: EdgeId,
    segment: usize,
    point: LocalPoint,
}

fn first_ray_hit(g: &RoadGraph, origin: &LocalPoint, dir: (f64, f64), probe: f64, skip: EdgeId) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (id, e) in g.edges() {
        if id == skip {
            continue;
        }
        for (i, w) in e.polyline.windows(2).enumerate() {
            let Some((t, u)) = geom::ray_segment_intersection(origin, dir, probe, &w[0], &w[1]) else {
                continue;
            };
            if t > 1e-9 && best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(RayHit {
                    t,
                    edge: id,
                    segment: i,
                    point: w[0].lerp(&w[1], u),
                });
            }
        }
    }
    best
}

/// Node at `hit`, splitting the hit edge unless the hit is one of its ends.
fn split_at(g: &mut RoadGraph, hit: &RayHit) -> Result<NodeId> {
    let edge = g.edge(hit.edge).expect("hit edge exists").clone();
    for n in [edge.a, edge.b] {
        if g.node(n).is_some_and(|p| p.dist_xy(&hit.point) < 1e-9) {
            return Ok(n);
        }
    }
    let mut head: Vec<LocalPoint> = edge.polyline[..=hit.segment].to_vec();
    let mut tail: Vec<LocalPoint> = edge.polyline[hit.segment + 1..].to_vec();
    if head.last().is_some_and(|p| p.dist_xy(&hit.point) < 1e-9) {
        head.pop();
    }
    if tail.first().is_some_and(|p| p.dist_xy(&hit.point) < 1e-9) {
        tail.remove(0);
    }
    head.push(hit.point);
    tail.insert(0, hit.point);
    g.remove_edge(hit.edge);
    let mid = g.add_node(hit.point);
    g.add_edge(edge.a, mid, head, edge.provenance)?;
    g.add_edge(mid, edge.b, tail, edge.provenance)?;
    Ok(mid)
}

/// Bridges dead ends either to a nearby compatible dead end or to the first
/// edge hit by their forward extension. Single pass in ascending node order;
/// each node gets at most one new edge.
pub fn fill_gaps(graph: &RoadGraph, config: &GapFillConfig) -> Result<RoadGraph> {
    config.validate()?;
    let mut g = graph.clone();
    let mut used: BTreeSet<NodeId> = BTreeSet::new();
    for v in dead_ends(graph) {
        if used.contains(&v) || g.degree(v) != 1 {
            continue;
        }
        let Some((own, partner, dir_v)) = arrival(&g, v) else { continue };
        let pv = *g.node(v).unwrap();

        let mut near: Option<(f64, NodeId)> = None;
        for u in dead_ends(&g) {
            if u == v || u == partner || used.contains(&u) {
                continue;
            }
            let pu = *g.node(u).unwrap();
            let d = pv.dist_xy(&pu);
            if d > config.max_gap_len || d == 0.0 || near.is_some_and(|(bd, _)| d >= bd) {
                continue;
            }
            let Some((_, _, dir_u)) = arrival(&g, u) else { continue };
            let turn_v = geom::angle_between(dir_v, (pu.x - pv.x, pu.y - pv.y));
            let turn_u = geom::angle_between(dir_u, (pv.x - pu.x, pv.y - pu.y));
            if turn_v <= config.max_turn_deg && turn_u <= config.max_turn_deg {
                near = Some((d, u));
            }
        }
        let hit = first_ray_hit(&g, &pv, dir_v, config.probe_len(), own);

        match (near, hit) {
            (Some((d, u)), hit) if hit.as_ref().is_none_or(|h| d <= h.t) => {
                g.add_straight_edge(v, u, Provenance::GapFill)?;
                used.extend([v, u]);
            }
            (_, Some(hit)) => {
                let target = split_at(&mut g, &hit)?;
                if target != v && g.node(target).unwrap().dist_xy(&pv) > 0.0 {
                    g.add_straight_edge(v, target, Provenance::GapFill)?;
                    used.extend([v, target]);
                }
            }
            _ => {}
        }
    }
    Ok(g)
}

/// Removes gap-fill edges supported by fewer than N distinct traces, then
/// re-cleans the graph.
pub fn prune_gap_edges(
    graph: &RoadGraph,
    traces: &[GnssTrace],
    match_cfg: &MatchConfig,
    config: &DisambiguationConfig,
    cleaning: &CleaningConfig,
    par: Parallelism,
) -> Result<RoadGraph> {
    config.validate()?;
    let gap_edges: Vec<EdgeId> = graph
        .edges()
        .filter(|(_, e)| e.provenance == Provenance::GapFill)
        .map(|(id, _)| id)
        .collect();
    if gap_edges.is_empty() {
        return Ok(graph.clone());
    }
    let matcher = Matcher::new(graph, *match_cfg)?;
    let support = mapmatch::edge_support(&matcher.match_all(traces, par)?);
    let mut g = graph.clone();
    for e in gap_edges {
        let n = support.get(&e).copied().unwrap_or(0);
        if n < config.min_transition_support {
            log::debug!("removing gap edge {e} (support {n})");
            g.remove_edge(e);
        }
    }
    g.remove_isolated_nodes();
    prune_dead_ends(&simplify_degree2(&g)?, cleaning)
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Groups of incident edges at `v` linked by well-supported transitions.
/// `None` when the node should stay intact.
pub fn transition_groups(
    graph: &RoadGraph,
    v: NodeId,
    counts: &mapmatch::TransitionCounts,
    min_support: usize,
) -> Result<Option<Vec<Vec<EdgeId>>>> {
    let inc = graph.incident_edges(v)?;
    if graph.degree(v) < 3 || inc.iter().any(|e| graph.edge(*e).is_some_and(|x| x.is_self_loop())) {
        return Ok(None);
    }
    let mut parent: Vec<usize> = (0..inc.len()).collect();
    let mut any = false;
    for i in 0..inc.len() {
        for j in i + 1..inc.len() {
            if counts.get(v, inc[i], inc[j]) >= min_support {
                any = true;
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    if !any {
        return Ok(None);
    }
    let mut by_root: BTreeMap<usize, Vec<EdgeId>> = BTreeMap::new();
    for (i, e) in inc.iter().enumerate() {
        by_root.entry(find(&mut parent, i)).or_default().push(*e);
    }
    let (mut groups, singles): (Vec<Vec<EdgeId>>, Vec<Vec<EdgeId>>) = by_root.into_values().partition(|g| g.len() >= 2);
    if groups.len() < 2 {
        return Ok(None);
    }
    let largest = (0..groups.len()).max_by_key(|&i| (groups[i].len(), std::cmp::Reverse(i))).unwrap();
    groups[largest].extend(singles.into_iter().flatten());
    groups[largest].sort();
    Ok(Some(groups))
}

/// Splits every junction whose traversals fall into two or more disjoint
/// groups of edges, then merges the resulting degree-2 nodes.
pub fn disambiguate_intersections(
    graph: &RoadGraph,
    traces: &[GnssTrace],
    match_cfg: &MatchConfig,
    config: &DisambiguationConfig,
    par: Parallelism,
) -> Result<RoadGraph> {
    config.validate()?;
    if graph.edge_count() == 0 {
        return Ok(graph.clone());
    }
    let matcher = Matcher::new(graph, match_cfg.uniform())?;
    let counts = mapmatch::transition_counts(&matcher.match_all(traces, par)?, graph);
    if counts.skipped > 0 {
        log::debug!("{} non-adjacent run pairs ignored", counts.skipped);
    }
    let mut g = graph.clone();
    for v in graph.node_ids() {
        let Some(groups) = transition_groups(graph, v, &counts, config.min_transition_support)? else {
            continue;
        };
        let pos = *g.node(v).unwrap();
        log::debug!("splitting node {v} into {} groups", groups.len());
        for group in &groups[1..] {
            let nv = g.add_node(pos);
            for e in group {
                g.reattach(*e, v, nv)?;
            }
        }
    }
    simplify_degree2(&g)
}
