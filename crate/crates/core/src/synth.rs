//! Deterministic synthetic fleet data: ground-truth road layouts, noisy
//! traces driven along routes over them, and semantic points derived from
//! lane geometry. Every output is a pure function of its inputs and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::geom;
use crate::model::{
    EdgeId, FleetDataset, GnssTrace, LocalFrame, LocalPoint, NodeId, Provenance, RoadGraph, SemanticClass,
    SemanticPoint, TraceId,
};
use crate::routing;

/// Vertical clearance of the upper road in the overpass scenario.
pub const OVERPASS_HEIGHT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Grid,
    Overpass,
    Intersection,
    Tee,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Straight,
        ScenarioKind::Grid,
        ScenarioKind::Overpass,
        ScenarioKind::Intersection,
        ScenarioKind::Tee,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Grid => "grid",
            ScenarioKind::Overpass => "overpass",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::Tee => "tee",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    pub extent: f64,
    pub lane_width: f64,
    /// Lattice spacing, grid scenario only.
    pub block_size: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: ScenarioKind::Grid,
            extent: 1000.0,
            lane_width: 3.5,
            block_size: 500.0,
        }
    }
}

impl ScenarioSpec {
    pub fn new(name: ScenarioKind) -> Self {
        Self {
            name,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) {
            return Err(Error::invalid("scenario extent must be > 0"));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::invalid("lane width must be > 0"));
        }
        if self.name == ScenarioKind::Grid && !(self.block_size > 0.0 && self.block_size <= self.extent) {
            return Err(Error::invalid("grid block size must be in (0, extent]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub white_sigma: f64,
    pub bias_sigma: f64,
    pub bias_correlation_length: f64,
    pub point_spacing: f64,
    pub dropout_prob: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            white_sigma: 1.0,
            bias_sigma: 2.0,
            bias_correlation_length: 500.0,
            point_spacing: 5.0,
            dropout_prob: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            white_sigma: 0.0,
            bias_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.white_sigma >= 0.0 && self.bias_sigma >= 0.0) {
            return Err(Error::invalid("noise sigmas must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::invalid("dropout probability must be in [0, 1]"));
        }
        if !(self.point_spacing > 0.0) || !(self.bias_correlation_length > 0.0) {
            return Err(Error::invalid("point spacing and bias correlation length must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePolicy {
    #[default]
    AllShortestPaths,
    PerEdgeShuttle,
    StraightThroughOnly,
}

impl FromStr for RoutePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_shortest_paths" => Ok(RoutePolicy::AllShortestPaths),
            "per_edge_shuttle" => Ok(RoutePolicy::PerEdgeShuttle),
            "straight_through_only" => Ok(RoutePolicy::StraightThroughOnly),
            _ => Err(Error::invalid(format!("unknown route policy `{s}`"))),
        }
    }
}

/// Ground-truth edge of every trace point, indexed by point position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceOracle {
    pub assignments: BTreeMap<TraceId, Vec<Option<EdgeId>>>,
}

impl TraceOracle {
    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Distinct traces having at least one point on each edge.
    pub fn edge_support(&self) -> BTreeMap<EdgeId, usize> {
        let mut out = BTreeMap::new();
        for seq in self.assignments.values() {
            let distinct: BTreeSet<EdgeId> = seq.iter().flatten().copied().collect();
            for e in distinct {
                *out.entry(e).or_insert(0) += 1;
            }
        }
        out
    }
}

/// A walk over the ground truth: edges in travel order with their direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub start: NodeId,
    pub edges: Vec<EdgeId>,
}

impl Route {
    fn geometry(&self, gt: &RoadGraph) -> (Vec<LocalPoint>, Vec<(f64, EdgeId)>) {
        let mut line: Vec<LocalPoint> = Vec::new();
        let mut spans = Vec::new();
        let mut node = self.start;
        let mut acc = 0.0;
        for &e in &self.edges {
            let edge = gt.edge(e).expect("route edge exists");
            let part = edge.polyline_from(node);
            acc += geom::polyline_length(&part);
            spans.push((acc, e));
            if line.is_empty() {
                line.extend(part);
            } else {
                line.extend(part.into_iter().skip(1));
            }
            node = edge.other(node);
        }
        (line, spans)
    }

    fn reversed(&self, gt: &RoadGraph) -> Route {
        let mut node = self.start;
        for &e in &self.edges {
            node = gt.edge(e).unwrap().other(node);
        }
        Route {
            start: node,
            edges: self.edges.iter().rev().copied().collect(),
        }
    }
}

fn straight(gt: &mut RoadGraph, a: NodeId, b: NodeId) {
    gt.add_straight_edge(a, b, Provenance::GroundTruth)
        .expect("scenario nodes are distinct");
}

/// Ground-truth graph of a named scenario. Layouts are fixed; the seed is
/// accepted for interface symmetry with the samplers.
pub fn make_ground_truth(spec: &ScenarioSpec, _seed: u64) -> Result<RoadGraph> {
    spec.validate()?;
    let e = spec.extent;
    let h = e / 2.0;
    let mut g = RoadGraph::new();
    match spec.name {
        ScenarioKind::Straight => {
            let a = g.add_node(LocalPoint::xy(0.0, 0.0));
            let b = g.add_node(LocalPoint::xy(e, 0.0));
            straight(&mut g, a, b);
        }
        ScenarioKind::Grid => {
            let n = (e / spec.block_size + 1e-9).floor() as usize + 1;
            let mut ids = vec![vec![NodeId(0); n]; n];
            for (j, row) in ids.iter_mut().enumerate() {
                for (i, id) in row.iter_mut().enumerate() {
                    *id = g.add_node(LocalPoint::xy(i as f64 * spec.block_size, j as f64 * spec.block_size));
                }
            }
            for j in 0..n {
                for i in 0..n {
                    if i + 1 < n {
                        straight(&mut g, ids[j][i], ids[j][i + 1]);
                    }
                    if j + 1 < n {
                        straight(&mut g, ids[j][i], ids[j + 1][i]);
                    }
                }
            }
        }
        ScenarioKind::Overpass => {
            let w = g.add_node(LocalPoint::new(0.0, h, 0.0));
            let east = g.add_node(LocalPoint::new(e, h, 0.0));
            let s = g.add_node(LocalPoint::new(h, 0.0, OVERPASS_HEIGHT));
            let n = g.add_node(LocalPoint::new(h, e, OVERPASS_HEIGHT));
            straight(&mut g, w, east);
            straight(&mut g, s, n);
        }
        ScenarioKind::Intersection | ScenarioKind::Tee => {
            let c = g.add_node(LocalPoint::xy(h, h));
            let mut arms = vec![(0.0, h), (e, h), (h, 0.0)];
            if spec.name == ScenarioKind::Intersection {
                arms.push((h, e));
            }
            for (x, y) in arms {
                let n = g.add_node(LocalPoint::xy(x, y));
                straight(&mut g, c, n);
            }
        }
    }
    Ok(g)
}

fn departure_direction(gt: &RoadGraph, e: EdgeId, from: NodeId) -> (f64, f64) {
    let line = gt.edge(e).unwrap().polyline_from(from);
    let rev: Vec<_> = line.into_iter().rev().collect();
    let (x, y) = geom::terminal_direction(&rev, 5.0).unwrap_or((1.0, 0.0));
    (-x, -y)
}

fn straight_continuation(gt: &RoadGraph, node: NodeId, arriving_dir: (f64, f64), exclude: EdgeId) -> Option<EdgeId> {
    gt.incident_edges(node)
        .ok()?
        .into_iter()
        .filter(|&e| e != exclude && !gt.edge(e).unwrap().is_self_loop())
        .map(|e| (geom::angle_between(arriving_dir, departure_direction(gt, e, node)), e))
        .filter(|(a, _)| *a <= 45.0)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, e)| e)
}

fn canonical(route: &Route, gt: &RoadGraph) -> Vec<EdgeId> {
    route.edges.clone().min(route.reversed(gt).edges)
}

/// Routes generated by a policy, in deterministic order.
pub fn routes(gt: &RoadGraph, policy: RoutePolicy) -> Vec<Route> {
    match policy {
        RoutePolicy::PerEdgeShuttle => gt
            .edges()
            .map(|(id, e)| Route {
                start: e.a,
                edges: vec![id],
            })
            .collect(),
        RoutePolicy::AllShortestPaths => {
            let nodes = gt.node_ids();
            let mut out = Vec::new();
            for (i, &a) in nodes.iter().enumerate() {
                let sp = routing::dijkstra(gt, &[(a, 0.0)], f64::INFINITY);
                for &b in &nodes[i + 1..] {
                    if let Some(path) = sp.path_to(b) {
                        if !path.is_empty() {
                            out.push(Route {
                                start: a,
                                edges: path.into_iter().map(|(e, _)| e).collect(),
                            });
                        }
                    }
                }
            }
            out
        }
        RoutePolicy::StraightThroughOnly => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for n in gt.node_ids() {
                for e in gt.incident_edges(n).unwrap() {
                    if gt.edge(e).unwrap().is_self_loop() {
                        continue;
                    }
                    // only start where the road does not continue straight behind us
                    let dep = departure_direction(gt, e, n);
                    if straight_continuation(gt, n, (-dep.0, -dep.1), e).is_some() {
                        continue;
                    }
                    let mut route = Route {
                        start: n,
                        edges: vec![e],
                    };
                    let mut used = BTreeSet::from([e]);
                    let mut cur_edge = e;
                    let mut cur = gt.edge(e).unwrap().other(n);
                    loop {
                        let line = gt.edge(cur_edge).unwrap().polyline_from(gt.edge(cur_edge).unwrap().other(cur));
                        let arriving = geom::terminal_direction(&line, 5.0).unwrap_or((1.0, 0.0));
                        match straight_continuation(gt, cur, arriving, cur_edge) {
                            Some(next) if used.insert(next) => {
                                route.edges.push(next);
                                cur = gt.edge(next).unwrap().other(cur);
                                cur_edge = next;
                            }
                            _ => break,
                        }
                    }
                    if seen.insert(canonical(&route, gt)) {
                        out.push(route);
                    }
                }
            }
            out
        }
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn drive(
    gt: &RoadGraph,
    route: &Route,
    noise: &NoiseModel,
    id: TraceId,
    rng: &mut ChaCha8Rng,
) -> (GnssTrace, Vec<Option<EdgeId>>) {
    let route = if rng.random_bool(0.5) {
        route.reversed(gt)
    } else {
        route.clone()
    };
    let (line, spans) = route.geometry(gt);
    let total = spans.last().map_or(0.0, |s| s.0);
    let spacing = noise.point_spacing;

    let offset = rng.random::<f64>() * spacing.min(total);
    let mut stations: Vec<f64> = (0..)
        .map(|i| offset + i as f64 * spacing)
        .take_while(|s| *s <= total)
        .collect();
    if stations.len() < 2 {
        stations = vec![total / 3.0, 2.0 * total / 3.0];
    }

    // bias targets every correlation length, each capped at 6 sigma
    let cap = 6.0 * noise.bias_sigma;
    let n_targets = (total / noise.bias_correlation_length).ceil() as usize + 2;
    let targets: Vec<(f64, f64)> = (0..n_targets)
        .map(|_| {
            let (bx, by) = (noise.bias_sigma * normal(rng), noise.bias_sigma * normal(rng));
            let m = bx.hypot(by);
            if m > cap && m > 0.0 {
                (bx * cap / m, by * cap / m)
            } else {
                (bx, by)
            }
        })
        .collect();

    let mut points = Vec::with_capacity(stations.len());
    let mut truth = Vec::with_capacity(stations.len());
    for s in stations {
        let p = geom::point_at(&line, s);
        let k = s / noise.bias_correlation_length;
        let i = (k.floor() as usize).min(n_targets - 2);
        let f = k - i as f64;
        let bias = (
            targets[i].0 + (targets[i + 1].0 - targets[i].0) * f,
            targets[i].1 + (targets[i + 1].1 - targets[i].1) * f,
        );
        let wx = noise.white_sigma * normal(rng);
        let wy = noise.white_sigma * normal(rng);
        points.push(LocalPoint::new(p.x + bias.0 + wx, p.y + bias.1 + wy, p.z));
        let edge = spans
            .iter()
            .find(|(end, _)| s < *end)
            .or(spans.last())
            .map(|(_, e)| *e);
        truth.push(edge);
    }
    (GnssTrace { id, points }, truth)
}

/// Drives `count` traces along each route.
pub fn sample_route_traces(
    gt: &RoadGraph,
    routes: &[(Route, usize)],
    noise: &NoiseModel,
    seed: u64,
) -> Result<(Vec<GnssTrace>, TraceOracle)> {
    noise.validate()?;
    let mut jobs = Vec::new();
    for (ri, (route, count)) in routes.iter().enumerate() {
        for k in 0..*count {
            jobs.push((ri, k, route));
        }
    }
    let driven = exec::map(Parallelism::Rayon, &jobs, |(ri, k, route)| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, *ri as u64, *k as u64));
        (!route.edges.is_empty()).then(|| drive(gt, route, noise, TraceId(0), &mut rng))
    });
    let mut traces = Vec::new();
    let mut oracle = TraceOracle::default();
    for (mut trace, truth) in driven.into_iter().flatten() {
        trace.id = TraceId(traces.len() as u64);
        oracle.assignments.insert(trace.id, truth);
        traces.push(trace);
    }
    Ok((traces, oracle))
}

pub fn sample_traces(
    gt: &RoadGraph,
    n_per_route: i64,
    noise: &NoiseModel,
    policy: RoutePolicy,
    seed: u64,
) -> Result<(Vec<GnssTrace>, TraceOracle)> {
    if n_per_route < 0 {
        return Err(Error::invalid(format!("n_per_route must be >= 0, got {n_per_route}")));
    }
    if gt.edge_count() == 0 {
        return Err(Error::invalid("ground truth has no edges"));
    }
    let jobs: Vec<(Route, usize)> = routes(gt, policy)
        .into_iter()
        .map(|r| (r, n_per_route as usize))
        .collect();
    sample_route_traces(gt, &jobs, noise, seed)
}

/// Lane markings at half a lane width and road boundaries at a full lane
/// width on both sides of the true centerline of every trace point.
pub fn emit_semantic_points(
    gt: &RoadGraph,
    traces: &[GnssTrace],
    oracle: &TraceOracle,
    spec: &ScenarioSpec,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<SemanticPoint>> {
    spec.validate()?;
    noise.validate()?;
    let jitter = noise.white_sigma / 2.0;
    let per_trace = exec::map(Parallelism::Rayon, traces, |trace| -> Result<Vec<SemanticPoint>> {
        let truth = oracle
            .assignments
            .get(&trace.id)
            .ok_or_else(|| Error::invalid(format!("no oracle entry for trace {}", trace.id)))?;
        if truth.len() != trace.points.len() {
            return Err(Error::invalid(format!("oracle length mismatch for trace {}", trace.id)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, trace.id.0, 0x5E3A));
        let mut out = Vec::new();
        for (p, e) in trace.points.iter().zip(truth) {
            let Some(e) = e else { continue };
            let edge = gt
                .edge(*e)
                .ok_or_else(|| Error::invalid(format!("oracle edge {e} missing from ground truth")))?;
            let pr = geom::project_onto_polyline(p, &edge.polyline);
            let (a, b) = (edge.polyline[pr.segment], edge.polyline[pr.segment + 1]);
            let len = a.dist_xy(&b);
            let (tx, ty) = ((b.x - a.x) / len, (b.y - a.y) / len);
            let normal_dir = (-ty, tx);
            for side in [1.0, -1.0] {
                if rng.random::<f64>() < noise.dropout_prob {
                    continue;
                }
                for (offset, class) in [
                    (spec.lane_width, SemanticClass::RoadBoundary),
                    (spec.lane_width / 2.0, SemanticClass::LaneMarking),
                ] {
                    let jx = jitter * normal(&mut rng);
                    let jy = jitter * normal(&mut rng);
                    out.push(SemanticPoint {
                        position: LocalPoint::new(
                            pr.point.x + side * offset * normal_dir.0 + jx,
                            pr.point.y + side * offset * normal_dir.1 + jy,
                            pr.point.z,
                        ),
                        class,
                    });
                }
            }
        }
        Ok(out)
    });
    let mut points = Vec::new();
    for chunk in per_trace {
        points.extend(chunk?);
    }
    Ok(points)
}

/// Everything needed to generate one synthetic scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scenario: ScenarioSpec,
    pub noise: NoiseModel,
    pub route_policy: RoutePolicy,
    pub n_per_route: i64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            noise: NoiseModel::default(),
            route_policy: RoutePolicy::AllShortestPaths,
            n_per_route: 10,
            origin_lat: 37.7749,
            origin_lon: -122.4194,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub ground_truth: RoadGraph,
    pub dataset: FleetDataset,
    pub oracle: TraceOracle,
}

pub fn synthesize(config: &SynthConfig, seed: u64) -> Result<Synthetic> {
    let frame = LocalFrame::new(config.origin_lat, config.origin_lon)?;
    let gt = make_ground_truth(&config.scenario, seed)?;
    let (traces, oracle) = sample_traces(&gt, config.n_per_route, &config.noise, config.route_policy, seed)?;
    let points = emit_semantic_points(&gt, &traces, &oracle, &config.scenario, &config.noise, seed)?;
    Ok(Synthetic {
        ground_truth: gt,
        dataset: FleetDataset { frame, traces, points },
        oracle,
    })
}
