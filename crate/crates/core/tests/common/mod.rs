//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::ops::Range;

use fleetmap::exec::Parallelism;
use fleetmap::extract::{self, ThinningAlgorithm};
use fleetmap::mapmatch::{Lattice, MatchConfig, Matcher};
use fleetmap::mask::BinaryMask;
use fleetmap::model::{EdgeId, GnssTrace, LocalPoint, NodeId, Provenance, RoadGraph, TraceId};
use fleetmap::raster::{Channel, RasterTile, TileSpec};
use fleetmap::segment::{self, CpLossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximal runs in which every step has a state reachable from the run start.
pub fn reachable_runs(l: &Lattice) -> Vec<Range<usize>> {
    let n = l.emissions.len();
    let mut runs = Vec::new();
    if n == 0 {
        return runs;
    }
    let mut start = 0;
    let mut live: Vec<bool> = vec![true; l.emissions[0].len()];
    for i in 1..n {
        let nb = l.emissions[i].len();
        let next: Vec<bool> = (0..nb)
            .map(|b| (0..live.len()).any(|a| live[a] && l.transitions[i - 1][a * nb + b].is_finite()))
            .collect();
        if next.iter().any(|x| *x) {
            live = next;
        } else {
            runs.push(start..i);
            start = i;
            live = vec![true; nb];
        }
    }
    runs.push(start..n);
    runs
}

/// Joint log score of `path` restricted to `run`.
pub fn run_score(l: &Lattice, run: &Range<usize>, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in run.clone() {
        s += l.emissions[i][path[i]];
        if i > run.start {
            let nb = l.emissions[i].len();
            s += l.transitions[i - 1][path[i - 1] * nb + path[i]];
        }
    }
    s
}

/// Best score of each run by exhaustive enumeration.
pub fn brute_force_map(l: &Lattice) -> Vec<(Range<usize>, f64)> {
    reachable_runs(l)
        .into_iter()
        .map(|run| {
            let sizes: Vec<usize> = run.clone().map(|i| l.emissions[i].len()).collect();
            let total: usize = sizes.iter().product();
            let mut best = f64::NEG_INFINITY;
            let mut path = vec![0usize; l.emissions.len()];
            for mut code in 0..total {
                for (k, i) in run.clone().enumerate() {
                    path[i] = code % sizes[k];
                    code /= sizes[k];
                }
                best = best.max(run_score(l, &run, &path));
            }
            (run, best)
        })
        .collect()
}

/// Union of random discs and thin rectangles.
pub fn blob(seed: u64, w: usize, h: usize) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<(u8, f64, f64, f64, f64)> = (0..rng.random_range(1..6))
        .map(|_| {
            (
                rng.random_range(0..2),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(1.0..10.0),
                rng.random_range(1.0..10.0),
            )
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        shapes.iter().any(|&(kind, cx, cy, a, b)| match kind {
            0 => (x - cx).powi(2) + (y - cy).powi(2) <= a * a,
            _ => (x - cx).abs() <= a && (y - cy).abs() <= b / 3.0,
        })
    })
}

/// Union-find count of 8-connected foreground components.
pub fn components8(m: &BinaryMask) -> usize {
    let n = m.width * m.height;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.data[y * m.width + x] {
                continue;
            }
            for (dx, dy) in [(1i64, 0i64), (0, 1), (1, 1), (-1, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if m.get(nx, ny) {
                    let a = find(&mut parent, y * m.width + x);
                    let b = find(&mut parent, ny as usize * m.width + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    (0..n).filter(|&i| m.data[i] && find(&mut parent, i) == i).count()
}

/// Pixelwise recomputation of the CP loss from its definition, given the
/// two skeletons. Returns (total, bce, dice, penalty).
#[allow(clippy::too_many_arguments)]
pub fn naive_cp_loss(
    pred: &[f64],
    label: &[f64],
    w: usize,
    h: usize,
    pred_skel: &[bool],
    label_skel: &[bool],
    sigma: f64,
    eps: f64,
) -> (f64, f64, f64, f64) {
    let n = (w * h) as f64;
    let bce_px = |i: usize| {
        let p = pred[i].max(eps).min(1.0 - eps);
        let y = label[i];
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };
    let bce = (0..w * h).map(bce_px).sum::<f64>() / n;
    let inter: f64 = (0..w * h).map(|i| pred[i] * label[i]).sum();
    let dice = 1.0 - (2.0 * inter + eps) / (pred.iter().sum::<f64>() + label.iter().sum::<f64>() + eps);
    // 2x2 dilation anchored at the top-left cell: a pixel is covered when it
    // or its -x, -y, or -x-y neighbour is set
    let covered = |s: &[bool], x: usize, y: usize| {
        [(0usize, 0usize), (1, 0), (0, 1), (1, 1)]
            .iter()
            .any(|&(dx, dy)| x >= dx && y >= dy && s[(y - dy) * w + (x - dx)])
    };
    let mut penalty = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = (pred_skel[i] && !covered(label_skel, x, y)) || (label_skel[i] && !covered(pred_skel, x, y));
            if m {
                penalty += bce_px(i);
            }
        }
    }
    let penalty = sigma * penalty / n;
    (bce + dice + penalty, bce, dice, penalty)
}

/// Four-way crossing at (500, 500) with random arm provenance.
pub fn crossing(rng: &mut ChaCha8Rng) -> RoadGraph {
    let mut g = RoadGraph::new();
    let c = g.add_node(LocalPoint::xy(500.0, 500.0));
    for (x, y) in [(0.0, 500.0), (1000.0, 500.0), (500.0, 0.0), (500.0, 1000.0)] {
        let n = g.add_node(LocalPoint::xy(x, y));
        let p = if rng.random_bool(0.3) { Provenance::GapFill } else { Provenance::Segmentation };
        g.add_straight_edge(c, n, p).unwrap();
    }
    g
}

pub fn wander(rng: &mut ChaCha8Rng, n: usize) -> GnssTrace {
    let mut p = LocalPoint::xy(500.0 + rng.random_range(-60.0..60.0), 500.0 + rng.random_range(-60.0..60.0));
    let mut points = vec![p];
    for _ in 1..n {
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let d: f64 = rng.random_range(3.0..30.0);
        p = LocalPoint::xy(p.x + d * a.cos(), p.y + d * a.sin());
        points.push(p);
    }
    GnssTrace::new(TraceId(0), points).unwrap()
}

/// Candidates by hand: every arm runs from the center, so the offset is the
/// clamped projection length along the arm.
pub fn hand_candidates(g: &RoadGraph, p: &LocalPoint, radius: f64) -> Vec<(EdgeId, f64, f64)> {
    let mut out = Vec::new();
    for (id, e) in g.edges() {
        let (a, b) = (e.polyline[0], e.polyline[1]);
        let len = a.dist_xy(&b);
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let t = ((p.x - a.x) * ux + (p.y - a.y) * uy).clamp(0.0, len);
        let d = ((a.x + t * ux - p.x).powi(2) + (a.y + t * uy - p.y).powi(2)).sqrt();
        if d <= radius {
            out.push((id, t, d));
        }
    }
    out
}

/// The HMM of a crossing written out in closed form. Between arms the only
/// admissible route passes the center and crosses one node, entering `eb`.
pub fn hand_lattice(g: &RoadGraph, cfg: &MatchConfig, pts: &[LocalPoint], cands: &[Vec<(EdgeId, f64, f64)>]) -> Lattice {
    let center = NodeId(0);
    let alpha_sum: f64 = g.edges().map(|(_, e)| cfg.alpha(e.provenance)).sum();
    let emissions = cands
        .iter()
        .map(|cs| cs.iter().map(|c| -c.2 * c.2 / (2.0 * cfg.emission_sigma * cfg.emission_sigma)).collect())
        .collect();
    let transitions = (1..pts.len())
        .map(|k| {
            let d = pts[k - 1].dist_xy(&pts[k]);
            let limit = cfg.max_route_factor * d + 2.0 * cfg.candidate_radius;
            let mut row = Vec::new();
            for &(ea, oa, _) in &cands[k - 1] {
                for &(eb, ob, _) in &cands[k] {
                    let (route, log_p) = if ea == eb {
                        ((ob - oa).abs(), 0.0)
                    } else {
                        let e = g.edge(eb).unwrap();
                        assert_eq!(e.a, center);
                        (oa + ob, (cfg.alpha(e.provenance) / alpha_sum).ln())
                    };
                    row.push(if route <= limit { -(route - d).abs() / cfg.route_beta + log_p } else { f64::NEG_INFINITY });
                }
            }
            row
        })
        .collect();
    Lattice { emissions, transitions }
}

/// One random crossing and walk: the matcher's decoding must score as
/// well as exhaustive search over the closed-form HMM on every run.
pub fn check_random_crossing(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = crossing(rng);
    let cfg = MatchConfig {
        emission_sigma: rng.random_range(2.0..10.0),
        route_beta: rng.random_range(5.0..40.0),
        alpha_gap: rng.random_range(0.1..1.0),
        ..MatchConfig::default()
    };
    let n = rng.random_range(2..=12);
    let trace = wander(rng, n);
    let got = Matcher::new(&g, cfg).unwrap().match_trace(&trace).unwrap();
    let cands: Vec<_> = trace.points.iter().map(|p| hand_candidates(&g, p, cfg.candidate_radius)).collect();
    let mut i = 0;
    while i < cands.len() {
        if cands[i].is_empty() {
            if got.assignments[i].is_some() {
                return Err(format!("point {i} has no candidate but was assigned"));
            }
            i += 1;
            continue;
        }
        let start = i;
        while i < cands.len() && !cands[i].is_empty() {
            i += 1;
        }
        let l = hand_lattice(&g, &cfg, &trace.points[start..i], &cands[start..i]);
        let mut path = Vec::new();
        for (k, cs) in cands.iter().enumerate().take(i).skip(start) {
            let pos = cs.iter().position(|c| Some(c.0) == got.assignments[k]);
            path.push(pos.ok_or_else(|| format!("point {k} assigned outside its candidates"))?);
        }
        for (run, best) in brute_force_map(&l) {
            let s = run_score(&l, &run, &path);
            if (s - best).abs() > 1e-9 {
                return Err(format!("{s} vs {best}"));
            }
        }
    }
    Ok(())
}

/// Pixelwise CP-loss instances on a 64 x 64 tile.
pub const CP_N: usize = 64;

/// Label from one blob, prediction a noisy version of another.
pub fn cp_instance(seed: u64) -> (RasterTile, RasterTile) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = blob(seed, CP_N, CP_N);
    let guess = blob(seed + 1_000_000, CP_N, CP_N).union(&if rng.random_bool(0.5) { label.clone() } else { BinaryMask::new(CP_N, CP_N) });
    let pred: Vec<f64> = guess
        .data
        .iter()
        .map(|on| if *on { rng.random_range(0.4..=1.0) } else { rng.random_range(0.0..0.6) })
        .collect();
    let label: Vec<f64> = label.data.iter().map(|b| *b as u8 as f64).collect();
    (cp_tile(Channel::Probability, pred), cp_tile(Channel::Label, label))
}

pub fn cp_check(pred: &RasterTile, label: &RasterTile, cfg: &CpLossConfig) -> (f64, f64) {
    let got = segment::cp_loss(pred, label, cfg).unwrap();
    let skel = |t: &RasterTile, thr: f64| {
        extract::thin(&BinaryMask::from_tile(t, thr), ThinningAlgorithm::GuoHall, Parallelism::Sequential).data
    };
    let (total, bce, dice, pen) = naive_cp_loss(
        &pred.values,
        &label.values,
        CP_N,
        CP_N,
        &skel(pred, cfg.binarize_threshold),
        &skel(label, 0.5),
        cfg.sigma,
        cfg.epsilon,
    );
    for (a, b, name) in [(got.total, total, "total"), (got.bce, bce, "bce"), (got.dice, dice, "dice"), (got.connectivity_penalty, pen, "penalty")] {
        assert!((a - b).abs() <= 1e-9, "{name}: {a} vs {b}");
    }
    assert!(got.total >= got.bce + got.dice);
    (got.total, got.connectivity_penalty)
}

pub fn cp_tile(channel: Channel, values: Vec<f64>) -> RasterTile {
    RasterTile::from_values(TileSpec::new(0.0, 0.0, 1.0, CP_N, CP_N).unwrap(), channel, values).unwrap()
}
