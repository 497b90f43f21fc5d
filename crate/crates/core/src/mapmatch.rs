//! HMM map matching with provenance-weighted edge transitions.
//!
//! Emissions are Gaussian in the projection distance. Transitions penalise
//! the discrepancy between the along-graph route length and the straight
//! line between consecutive fixes, and add `ln P(v, e)` for every node `v`
//! crossed, where `P(v, e) = alpha(e) / sum of alpha over the edges at v`.

use std::collections::{BTreeMap, BTreeSet};

use rstar::primitives::{GeomWithData, Line};
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::geom;
use crate::model::{EdgeId, GnssTrace, LocalPoint, NodeId, Provenance, RoadGraph, TraceId};
use crate::routing;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub candidate_radius: f64,
    pub emission_sigma: f64,
    pub alpha_seg: f64,
    pub alpha_gap: f64,
    pub route_beta: f64,
    pub max_route_factor: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            candidate_radius: 25.0,
            emission_sigma: 5.0,
            alpha_seg: 1.0,
            alpha_gap: 0.3,
            route_beta: 20.0,
            max_route_factor: 3.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.candidate_radius,
            self.emission_sigma,
            self.alpha_seg,
            self.alpha_gap,
            self.route_beta,
            self.max_route_factor,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid("match parameters must be finite and > 0"));
        }
        if self.alpha_gap > self.alpha_seg {
            return Err(Error::invalid("alpha_gap must not exceed alpha_seg"));
        }
        Ok(())
    }

    /// Same scales with equal weights for every edge.
    pub fn uniform(&self) -> Self {
        Self {
            alpha_gap: self.alpha_seg,
            ..*self
        }
    }

    pub fn alpha(&self, provenance: Provenance) -> f64 {
        match provenance {
            Provenance::GapFill => self.alpha_gap,
            _ => self.alpha_seg,
        }
    }
}

type IndexedSegment = GeomWithData<Line<[f64; 2]>, EdgeId>;

/// R-tree over every polyline segment of a graph. Read-only after build.
pub struct EdgeIndex {
    tree: RTree<IndexedSegment>,
}

pub fn build_index(graph: &RoadGraph) -> Result<EdgeIndex> {
    if graph.edge_count() == 0 {
        return Err(Error::invalid("cannot index a graph without edges"));
    }
    let segments = graph
        .edges()
        .flat_map(|(id, e)| {
            e.polyline
                .windows(2)
                .map(move |w| GeomWithData::new(Line::new([w[0].x, w[0].y], [w[1].x, w[1].y]), id))
        })
        .collect();
    Ok(EdgeIndex {
        tree: RTree::bulk_load(segments),
    })
}

impl EdgeIndex {
    /// Edges with some segment within `radius` of `p` (XY).
    pub fn edges_within(&self, p: &LocalPoint, radius: f64) -> BTreeSet<EdgeId> {
        self.tree
            .locate_within_distance([p.x, p.y], radius * radius)
            .map(|s| s.data)
            .collect()
    }

    /// Nearest edge and its XY distance.
    pub fn nearest(&self, p: &LocalPoint) -> Option<(EdgeId, f64)> {
        use rstar::PointDistance;
        self.tree
            .nearest_neighbor(&[p.x, p.y])
            .map(|s| (s.data, s.geom().distance_2(&[p.x, p.y]).sqrt()))
    }
}

/// Transition probability onto edge `e` at node `v`.
pub fn edge_transition_prob(v: NodeId, e: EdgeId, graph: &RoadGraph, config: &MatchConfig) -> Result<f64> {
    let incident = graph.incident_edges(v)?;
    if !incident.contains(&e) {
        return Err(Error::invalid(format!("edge {e} is not incident to node {v}")));
    }
    let alpha = |id: EdgeId| config.alpha(graph.edge(id).expect("incident edge exists").provenance);
    let total: f64 = incident.iter().map(|&id| alpha(id)).sum();
    Ok(alpha(e) / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub edge: EdgeId,
    /// Arc length of the projection, measured from the edge's `a` end.
    pub offset: f64,
    pub distance: f64,
}

/// HMM trellis in log space. `transitions[i]` is row-major
/// `emissions[i].len() x emissions[i + 1].len()`; `-inf` marks a forbidden move.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub emissions: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<f64>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in v.iter().enumerate() {
        if *s > v[best] {
            best = i;
        }
    }
    best
}

/// Viterbi decoding. Every step needs at least one state. When no state of a
/// step is reachable from the previous one, the chain is split there and
/// both parts are decoded independently.
pub fn viterbi(lattice: &Lattice) -> Vec<usize> {
    let n = lattice.emissions.len();
    let mut out = vec![0; n];
    if n == 0 {
        return out;
    }
    let mut back: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut score = lattice.emissions[0].clone();
    let mut start = 0;
    let finish = |out: &mut Vec<usize>, back: &[Vec<usize>], score: &[f64], start: usize, end: usize| {
        let mut best = argmax(score);
        out[end] = best;
        for k in (start + 1..=end).rev() {
            best = back[k][best];
            out[k - 1] = best;
        }
    };
    for i in 1..n {
        let em = &lattice.emissions[i];
        let tr = &lattice.transitions[i - 1];
        let nb = em.len();
        let mut next = vec![f64::NEG_INFINITY; nb];
        let mut bp = vec![0; nb];
        for (b, slot) in next.iter_mut().enumerate() {
            for (a, s) in score.iter().enumerate() {
                let v = s + tr[a * nb + b];
                if v > *slot {
                    *slot = v;
                    bp[b] = a;
                }
            }
            *slot += em[b];
        }
        if next.iter().all(|s| *s == f64::NEG_INFINITY) {
            finish(&mut out, &back, &score, start, i - 1);
            start = i;
            score = em.clone();
        } else {
            back[i] = bp;
            score = next;
        }
    }
    finish(&mut out, &back, &score, start, n - 1);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub trace_id: TraceId,
    pub assignments: Vec<Option<EdgeId>>,
    /// Arc length on the assigned edge, parallel to `assignments`.
    pub offsets: Vec<Option<f64>>,
}

/// A graph with its index and matching parameters.
pub struct Matcher<'g> {
    pub graph: &'g RoadGraph,
    pub index: EdgeIndex,
    pub config: MatchConfig,
}

impl<'g> Matcher<'g> {
    pub fn new(graph: &'g RoadGraph, config: MatchConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            graph,
            index: build_index(graph)?,
            config,
        })
    }

    pub fn candidates(&self, p: &LocalPoint) -> Vec<Candidate> {
        self.index
            .edges_within(p, self.config.candidate_radius)
            .into_iter()
            .filter_map(|id| {
                let proj = geom::project_onto_polyline(p, &self.graph.edge(id)?.polyline);
                (proj.distance <= self.config.candidate_radius).then_some(Candidate {
                    edge: id,
                    offset: proj.offset,
                    distance: proj.distance,
                })
            })
            .collect()
    }

    fn ln_prob(&self, v: NodeId, e: EdgeId) -> f64 {
        edge_transition_prob(v, e, self.graph, &self.config)
            .expect("routing only crosses incident edges")
            .ln()
    }

    /// Log transition scores between the candidates of two consecutive fixes.
    pub fn transition_scores(&self, p: &LocalPoint, q: &LocalPoint, from: &[Candidate], to: &[Candidate]) -> Vec<f64> {
        let cfg = &self.config;
        let straight = p.dist_xy(q);
        let limit = cfg.max_route_factor * straight + 2.0 * cfg.candidate_radius;
        let mut out = vec![f64::NEG_INFINITY; from.len() * to.len()];
        for (ia, a) in from.iter().enumerate() {
            let ea = self.graph.edge(a.edge).expect("candidate edge exists");
            let needs_routing = to.iter().any(|b| b.edge != a.edge);
            let sp = needs_routing.then(|| {
                routing::dijkstra(self.graph, &[(ea.a, a.offset), (ea.b, ea.length() - a.offset)], limit)
            });
            for (ib, b) in to.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                if b.edge == a.edge {
                    let route = (b.offset - a.offset).abs();
                    if route <= limit {
                        best = -(route - straight).abs() / cfg.route_beta;
                    }
                } else if let Some(sp) = &sp {
                    let eb = self.graph.edge(b.edge).expect("candidate edge exists");
                    let entries = [(eb.a, b.offset), (eb.b, eb.length() - b.offset)];
                    for (y, tail) in entries {
                        let Some(d) = sp.dist.get(&y) else { continue };
                        let route = d + tail;
                        if route > limit {
                            continue;
                        }
                        let mut factors = self.ln_prob(y, b.edge);
                        let mut cur = y;
                        while let Some(&(e, prev)) = sp.pred.get(&cur) {
                            factors += self.ln_prob(prev, e);
                            cur = prev;
                        }
                        best = best.max(-(route - straight).abs() / cfg.route_beta + factors);
                    }
                }
                out[ia * to.len() + ib] = best;
            }
        }
        out
    }

    pub fn match_trace(&self, trace: &GnssTrace) -> Result<MatchResult> {
        if trace.points.len() < 2 {
            return Err(Error::invalid(format!("trace {} has fewer than 2 points", trace.id)));
        }
        let n = trace.points.len();
        let cands: Vec<Vec<Candidate>> = trace.points.iter().map(|p| self.candidates(p)).collect();
        let mut result = MatchResult {
            trace_id: trace.id,
            assignments: vec![None; n],
            offsets: vec![None; n],
        };
        let two_sigma2 = 2.0 * self.config.emission_sigma * self.config.emission_sigma;
        let mut i = 0;
        while i < n {
            if cands[i].is_empty() {
                i += 1;
                continue;
            }
            let start = i;
            while i < n && !cands[i].is_empty() {
                i += 1;
            }
            let run = start..i;
            let lattice = Lattice {
                emissions: cands[run.clone()]
                    .iter()
                    .map(|cs| cs.iter().map(|c| -c.distance * c.distance / two_sigma2).collect())
                    .collect(),
                transitions: (start..i - 1)
                    .map(|k| self.transition_scores(&trace.points[k], &trace.points[k + 1], &cands[k], &cands[k + 1]))
                    .collect(),
            };
            for (k, choice) in run.zip(viterbi(&lattice)) {
                let c = cands[k][choice];
                result.assignments[k] = Some(c.edge);
                result.offsets[k] = Some(c.offset);
            }
        }
        Ok(result)
    }

    /// Matches every trace; output order follows the input.
    pub fn match_all(&self, traces: &[GnssTrace], par: Parallelism) -> Result<Vec<MatchResult>> {
        exec::map(par, traces, |t| self.match_trace(t)).into_iter().collect()
    }
}

pub fn match_trace(trace: &GnssTrace, graph: &RoadGraph, index: EdgeIndex, config: &MatchConfig) -> Result<MatchResult> {
    config.validate()?;
    Matcher {
        graph,
        index,
        config: *config,
    }
    .match_trace(trace)
}

/// Number of distinct traces with at least one fix on each edge.
pub fn edge_support(matches: &[MatchResult]) -> BTreeMap<EdgeId, usize> {
    let mut support = BTreeMap::new();
    for m in matches {
        let edges: BTreeSet<EdgeId> = m.assignments.iter().flatten().copied().collect();
        for e in edges {
            *support.entry(e).or_insert(0) += 1;
        }
    }
    support
}

/// Counts of consecutive-run edge pairs, keyed by `(shared node, lower edge, higher edge)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionCounts {
    pub counts: BTreeMap<(NodeId, EdgeId, EdgeId), usize>,
    /// Consecutive runs on edges that share no node.
    pub skipped: usize,
}

impl TransitionCounts {
    pub fn get(&self, node: NodeId, e1: EdgeId, e2: EdgeId) -> usize {
        let key = (node, e1.min(e2), e1.max(e2));
        self.counts.get(&key).copied().unwrap_or(0)
    }
}

pub fn transition_counts(matches: &[MatchResult], graph: &RoadGraph) -> TransitionCounts {
    let mut tc = TransitionCounts::default();
    for m in matches {
        // (edge, offset of the last fix in the run)
        let mut prev: Option<(EdgeId, f64)> = None;
        for (a, off) in m.assignments.iter().zip(&m.offsets) {
            let Some(e) = *a else {
                prev = None;
                continue;
            };
            let off = off.unwrap_or(0.0);
            match prev {
                Some((p, _)) if p == e => {}
                Some((p, p_off)) => match shared_node(graph, p, p_off, e) {
                    Some(v) => *tc.counts.entry((v, p.min(e), p.max(e))).or_insert(0) += 1,
                    None => {
                        tc.skipped += 1;
                        log::debug!("trace {}: runs on {p} and {e} are not adjacent", m.trace_id);
                    }
                },
                None => {}
            }
            prev = Some((e, off));
        }
    }
    tc
}

/// Node through which a run on `from` (last seen at `offset`) continues onto `to`.
fn shared_node(graph: &RoadGraph, from: EdgeId, offset: f64, to: EdgeId) -> Option<NodeId> {
    let (f, t) = (graph.edge(from)?, graph.edge(to)?);
    let shared: Vec<NodeId> = [f.a, f.b].into_iter().filter(|n| t.touches(*n)).collect();
    match shared.as_slice() {
        [] => None,
        [v] => Some(*v),
        _ if f.a == f.b => Some(f.a),
        _ => Some(if offset <= f.length() / 2.0 { f.a } else { f.b }),
    }
}
